//! Linear voltage-sensitivity model used by the coordinated controller.
//!
//! Voltages are expressed per unit in each node's own phase frame, so a
//! node at nominal reads `1 + 0j` regardless of its phase angle. Coupling
//! between phases is rotated by the Park matrix `D(θ)` for `θ = ∠i − ∠j`.

use thiserror::Error;

use crate::linalg::{invert_block, invert_complex, Matrix};
use crate::netmodel::{Network, Phase};
use crate::scalar::{Complex, Real};

#[derive(Debug, Error)]
pub enum LinModelError {
    #[error("reduced admittance matrix is singular")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("balanced model needs uniform segment phasing")]
    NonUniformPhasing,
    #[error("missing phase {phase} at bus {bus}")]
    MissingPhase { bus: usize, phase: Phase },
}

/// A row/column of the sensitivity matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelNode {
    pub bus: usize,
    /// `None` for the single-phase-equivalent (balanced) model.
    pub phase: Option<Phase>,
}

impl ModelNode {
    pub fn angle_deg(&self) -> f64 {
        self.phase.map_or(0.0, Phase::angle_deg)
    }
}

/// Real and imaginary parts of the reduced bus impedance matrix (per unit).
#[derive(Debug, Clone)]
pub struct SensitivityMatrices<T> {
    pub r: Matrix<T>,
    pub x: Matrix<T>,
    nodes: Vec<ModelNode>,
}

impl<T: Real> SensitivityMatrices<T> {
    pub fn nodes(&self) -> &[ModelNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_per_phase(&self) -> bool {
        self.nodes.first().is_some_and(|n| n.phase.is_some())
    }

    pub fn index_of(&self, bus: usize, phase: Option<Phase>) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| n.bus == bus && n.phase == phase)
    }

    pub fn z(&self, i: usize, j: usize) -> Complex<T> {
        Complex::new(self.r[(i, j)], self.x[(i, j)])
    }
}

fn reduce_and_invert<T: Real>(
    y: Matrix<Complex<T>>,
    keep: &[usize],
) -> Result<Matrix<Complex<T>>, LinModelError> {
    let reduced = Matrix::from_fn(keep.len(), keep.len(), |i, j| y[(keep[i], keep[j])]);
    invert_complex(&reduced).ok_or(LinModelError::Singular)
}

/// Single-phase-equivalent sensitivities, one node per non-slack bus.
///
/// Segments use their self impedance when single-phase and the positive
/// sequence impedance otherwise. The slack row/column is removed before
/// inversion.
pub fn build_sensitivity<T: Real>(
    network: &Network<T>,
) -> Result<SensitivityMatrices<T>, LinModelError> {
    if !network.uniform_phasing() {
        return Err(LinModelError::NonUniformPhasing);
    }
    let n = network.n_buses();
    let zb = network.base_impedance();
    let zero = Complex::new(T::zero(), T::zero());
    let mut y = Matrix::from_fn(n, n, |_, _| zero);
    for (li, line) in network.lines().iter().enumerate() {
        let ys = (network.segment_z_equivalent(li) / zb).inv();
        let (a, b) = (line.from_bus, line.to_bus);
        y[(a, a)] += ys;
        y[(b, b)] += ys;
        y[(a, b)] -= ys;
        y[(b, a)] -= ys;
    }
    let keep: Vec<usize> = (0..n).filter(|&b| b != network.slack()).collect();
    let z = reduce_and_invert(y, &keep)?;
    let nodes = keep
        .iter()
        .map(|&bus| ModelNode { bus, phase: None })
        .collect();
    Ok(SensitivityMatrices {
        r: z.map(|c| c.re),
        x: z.map(|c| c.im),
        nodes,
    })
}

/// Per-phase sensitivities over every non-slack (bus, phase) node, including
/// mutual coupling.
pub fn build_phase_sensitivity<T: Real>(
    network: &Network<T>,
) -> Result<SensitivityMatrices<T>, LinModelError> {
    let mut all = Vec::new();
    let mut slot = vec![[usize::MAX; 3]; network.n_buses()];
    for (b, bus) in network.buses().iter().enumerate() {
        for p in bus.phases.iter() {
            slot[b][p.index()] = all.len();
            all.push(ModelNode {
                bus: b,
                phase: Some(p),
            });
        }
    }
    let zb = network.base_impedance();
    let zero = Complex::new(T::zero(), T::zero());
    let mut y = Matrix::from_fn(all.len(), all.len(), |_, _| zero);
    for (li, line) in network.lines().iter().enumerate() {
        let z = network.segment_z(li);
        let phases: Vec<usize> = line.phases.iter().map(Phase::index).collect();
        let block: Vec<Vec<Complex<T>>> = phases
            .iter()
            .map(|&i| phases.iter().map(|&j| z[i][j] / zb).collect())
            .collect();
        let ys = invert_block(&block).ok_or(LinModelError::Singular)?;
        for (a, &i) in phases.iter().enumerate() {
            for (b, &j) in phases.iter().enumerate() {
                let (fi, fj) = (slot[line.from_bus][i], slot[line.from_bus][j]);
                let (ti, tj) = (slot[line.to_bus][i], slot[line.to_bus][j]);
                y[(fi, fj)] += ys[a][b];
                y[(ti, tj)] += ys[a][b];
                y[(fi, tj)] -= ys[a][b];
                y[(ti, fj)] -= ys[a][b];
            }
        }
    }
    let keep: Vec<usize> = (0..all.len())
        .filter(|&k| all[k].bus != network.slack())
        .collect();
    let z = reduce_and_invert(y, &keep)?;
    Ok(SensitivityMatrices {
        r: z.map(|c| c.re),
        x: z.map(|c| c.im),
        nodes: keep.iter().map(|&k| all[k]).collect(),
    })
}

/// Park rotation between two phase frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParkFrame {
    pub theta_deg: f64,
}

impl ParkFrame {
    pub fn new(theta_deg: f64) -> Self {
        Self { theta_deg }
    }

    /// Frame mapping a perturbation caused on `source` into the frame of `target`.
    pub fn between(target: Phase, source: Phase) -> Self {
        let mut d = target.angle_deg() - source.angle_deg();
        if d > 180.0 {
            d -= 360.0;
        } else if d < -180.0 {
            d += 360.0;
        }
        Self::new(d)
    }

    /// `D = [[cos θ, sin θ], [−sin θ, cos θ]]`.
    pub fn matrix<T: Real>(&self) -> [[T; 2]; 2] {
        let (s, c) = self.theta_deg.to_radians().sin_cos();
        [[T::lit(c), T::lit(s)], [T::lit(-s), T::lit(c)]]
    }

    pub fn apply<T: Real>(&self, v: [T; 2]) -> [T; 2] {
        let d = self.matrix::<T>();
        [
            d[0][0] * v[0] + d[0][1] * v[1],
            d[1][0] * v[0] + d[1][1] * v[1],
        ]
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), LinModelError> {
    if expected != got {
        return Err(LinModelError::Dimension { expected, got });
    }
    Ok(())
}

/// Divides an injection by `conj(V_nom)` when normalizing.
fn normalized<T: Real>(s: Complex<T>, vnom: Option<&[Complex<T>]>, m: usize) -> Complex<T> {
    match vnom {
        Some(v) => (s.conj() / v[m].conj()).conj(),
        None => s,
    }
}

/// Voltage change at every node for signed injections `p + jq` (pu), using
/// `Re ΔV = Σ R·p + X·q` and `Im ΔV = Σ X·p − R·q`. With `vnom`, each
/// injection is first divided by its node's linearization voltage.
pub fn delta_v_balanced<T: Real>(
    injections: &[Complex<T>],
    s: &SensitivityMatrices<T>,
    vnom: Option<&[Complex<T>]>,
) -> Result<Vec<Complex<T>>, LinModelError> {
    check_len(s.len(), injections.len())?;
    if let Some(v) = vnom {
        check_len(s.len(), v.len())?;
    }
    let n = s.len();
    let mut out = vec![Complex::new(T::zero(), T::zero()); n];
    for (k, o) in out.iter_mut().enumerate() {
        let (mut re, mut im) = (T::zero(), T::zero());
        for m in 0..n {
            let inj = normalized(injections[m], vnom, m);
            let (p, q) = (inj.re, inj.im);
            let (r, x) = (s.r[(k, m)], s.x[(k, m)]);
            re += r * p + x * q;
            im += x * p - r * q;
        }
        *o = Complex::new(re, im);
    }
    Ok(out)
}

/// Per-phase voltage change including mutual coupling. Each contribution
/// `[R p + X q; X p − R q]` is rotated by `D(∠i − ∠j)` into the target
/// node's frame.
pub fn delta_v_unbalanced<T: Real>(
    injections: &[Complex<T>],
    s: &SensitivityMatrices<T>,
    vnom: Option<&[Complex<T>]>,
) -> Result<Vec<Complex<T>>, LinModelError> {
    check_len(s.len(), injections.len())?;
    if let Some(v) = vnom {
        check_len(s.len(), v.len())?;
    }
    let nodes = s.nodes();
    let n = s.len();
    let mut out = vec![Complex::new(T::zero(), T::zero()); n];
    for k in 0..n {
        let target = nodes[k].phase;
        let (mut re, mut im) = (T::zero(), T::zero());
        for m in 0..n {
            let inj = normalized(injections[m], vnom, m);
            let (p, q) = (inj.re, inj.im);
            let (r, x) = (s.r[(k, m)], s.x[(k, m)]);
            let local = [r * p + x * q, x * p - r * q];
            let rotated = match (target, nodes[m].phase) {
                (Some(i), Some(j)) if i != j => ParkFrame::between(i, j).apply(local),
                _ => local,
            };
            re += rotated[0];
            im += rotated[1];
        }
        out[k] = Complex::new(re, im);
    }
    Ok(out)
}

/// Complex coefficient mapping `conj(s_m)` at node `m` to `ΔV_k`, including
/// phase rotation and optional normalization.
pub fn coupling<T: Real>(
    s: &SensitivityMatrices<T>,
    k: usize,
    m: usize,
    vnom: Option<&[Complex<T>]>,
) -> Complex<T> {
    let nodes = s.nodes();
    let mut c = s.z(k, m);
    if let (Some(i), Some(j)) = (nodes[k].phase, nodes[m].phase) {
        if i != j {
            let deg = j.angle_deg() - i.angle_deg();
            c *= crate::scalar::phasor::<T>(deg);
        }
    }
    match vnom {
        Some(v) => c / v[m].conj(),
        None => c,
    }
}

/// `(|V|, ∠V)` with the angle in degrees.
pub fn recover_magnitude<T: Real>(v: Complex<T>) -> (T, T) {
    (v.norm(), v.im.atan2(v.re).to_degrees())
}

/// Per-node voltage about which the model is linearized, with damping `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationPoint<T> {
    pub vnom: Vec<Complex<T>>,
    pub eta: T,
}

impl<T: Real> LinearizationPoint<T> {
    /// Flat start at `1 + 0j` everywhere.
    pub fn flat(n: usize, eta: T) -> Self {
        Self {
            vnom: vec![Complex::new(T::one(), T::zero()); n],
            eta,
        }
    }

    /// True when every `|V_nom|` lies in the 0.8–1.2 pu band and `η ∈ (0, 1]`.
    pub fn is_sane(&self) -> bool {
        self.eta > T::zero()
            && self.eta <= T::one()
            && self
                .vnom
                .iter()
                .all(|v| v.norm() >= T::lit(0.8) && v.norm() <= T::lit(1.2))
    }
}

/// `V_nom ← V_nom + η (V̂ − V)`, element-wise.
pub fn update_vnom<T: Real>(
    point: &LinearizationPoint<T>,
    measured: &[Complex<T>],
    model: &[Complex<T>],
) -> LinearizationPoint<T> {
    assert_eq!(point.vnom.len(), measured.len(), "measured length");
    assert_eq!(point.vnom.len(), model.len(), "model length");
    LinearizationPoint {
        vnom: point
            .vnom
            .iter()
            .zip(measured.iter().zip(model))
            .map(|(&v, (&vh, &vm))| v + (vh - vm) * point.eta)
            .collect(),
        eta: point.eta,
    }
}
