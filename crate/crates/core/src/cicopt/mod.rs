//! Coordinated inverter control: one convex program per timestep that trades
//! PV curtailment against line losses under inverter and voltage limits.

pub mod ipm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::linmodel::{
    build_phase_sensitivity, build_sensitivity, LinModelError, LinearizationPoint,
    SensitivityMatrices,
};
use crate::netmodel::{Network, Phase};
use crate::pfsolve::{PowerFlow, PowerFlowError, PowerInjection, VoltageSolution};
use crate::scalar::{phasor, Complex, Real};

pub use ipm::{
    kkt_certificate, Constraint, ConvexProgram, IpmResult, IpmSettings, KktCertificate, SolveStatus,
};

#[derive(Debug, Error)]
pub enum CicError {
    #[error(transparent)]
    Model(#[from] LinModelError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Single-phase-equivalent or full per-phase network representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Balanced,
    Unbalanced,
}

/// Form of the voltage limit at each coordinated inverter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageCap {
    /// `Re{V} ≤ V_max`
    RealPart,
    /// `|V|² ≤ V_max²`
    Magnitude,
}

impl ModelMode {
    pub fn default_cap(self) -> VoltageCap {
        match self {
            ModelMode::Balanced => VoltageCap::RealPart,
            ModelMode::Unbalanced => VoltageCap::Magnitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CicSettings {
    pub curtailment_weight: f64,
    pub loss_weight: f64,
    /// Fairness weight on the variance of curtailment ratios.
    pub alpha: f64,
    /// Overrides the mode's default voltage cap.
    pub cap: Option<VoltageCap>,
    /// Divide sensitivities by `conj(V_nom)`.
    pub normalize: bool,
    /// Bounds narrower than this (kW or kVAr) fix the variable.
    pub fixed_tol: f64,
    pub ipm: IpmSettings,
}

impl Default for CicSettings {
    fn default() -> Self {
        Self {
            curtailment_weight: 1.0,
            loss_weight: 1.0,
            alpha: 0.0,
            cap: None,
            normalize: true,
            fixed_tol: 1e-9,
            ipm: IpmSettings::default(),
        }
    }
}

impl CicSettings {
    pub fn validate(&self) -> Result<(), String> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.curtailment_weight) || !finite_nonneg(self.loss_weight) {
            return Err("objective weights must be finite and non-negative".into());
        }
        if !finite_nonneg(self.alpha) {
            return Err("alpha must be finite and non-negative".into());
        }
        if !(self.ipm.kkt_tol > 0.0) || !(self.ipm.tol > 0.0) || self.ipm.max_iter == 0 {
            return Err("solver tolerances and iteration limit must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeRef {
    Slack,
    Node(usize),
}

#[derive(Debug, Clone)]
struct LossBranch<T> {
    /// Per conductor: sending end, receiving end, phase angle (degrees).
    ends: Vec<(NodeRef, NodeRef, f64)>,
    g: Vec<Vec<T>>,
}

/// Network data the controller needs: sensitivities, loss conductances and
/// the mapping from customers to model nodes.
#[derive(Debug, Clone)]
pub struct CicModel<T> {
    mode: ModelMode,
    sens: SensitivityMatrices<T>,
    zrot: Matrix<Complex<T>>,
    branches: Vec<LossBranch<T>>,
    customer_nodes: Vec<Vec<(usize, T)>>,
    customer_node: Vec<Option<usize>>,
    customer_phases: Vec<Vec<Phase>>,
    customer_bus: Vec<usize>,
    n_buses: usize,
    base_kva: T,
    base_voltage: T,
}

impl<T: Real> CicModel<T> {
    pub fn new(net: &Network<T>, mode: ModelMode) -> Result<Self, CicError> {
        let sens = match mode {
            ModelMode::Balanced => build_sensitivity(net)?,
            ModelMode::Unbalanced => build_phase_sensitivity(net)?,
        };
        let nodes = sens.nodes().to_vec();
        let n = nodes.len();
        let zrot = Matrix::from_fn(n, n, |k, m| {
            let z = sens.z(k, m);
            match (nodes[k].phase, nodes[m].phase) {
                (Some(i), Some(j)) if i != j => z * phasor::<T>(j.angle_deg() - i.angle_deg()),
                _ => z,
            }
        });
        let node_of = |bus: usize, phase: Option<Phase>| -> NodeRef {
            if bus == net.slack() {
                NodeRef::Slack
            } else {
                NodeRef::Node(sens.index_of(bus, phase).expect("model node"))
            }
        };

        let pf = PowerFlow::new(net)?;
        let zb = net.base_impedance();
        let mut branches = Vec::with_capacity(net.lines().len());
        for (li, line) in net.lines().iter().enumerate() {
            match mode {
                ModelMode::Balanced => {
                    let y = (net.segment_z_equivalent(li) / zb).inv();
                    let g = T::from_usize_lossy(line.phases.len()) * y.re;
                    branches.push(LossBranch {
                        ends: vec![(
                            node_of(line.from_bus, None),
                            node_of(line.to_bus, None),
                            0.0,
                        )],
                        g: vec![vec![g]],
                    });
                }
                ModelMode::Unbalanced => {
                    let gfull = pf.segment_conductance(li);
                    let phases: Vec<Phase> = line.phases.iter().collect();
                    let ends = phases
                        .iter()
                        .map(|&p| {
                            (
                                node_of(line.from_bus, Some(p)),
                                node_of(line.to_bus, Some(p)),
                                p.angle_deg(),
                            )
                        })
                        .collect();
                    let g = phases
                        .iter()
                        .map(|a| phases.iter().map(|b| gfull[a.index()][b.index()]).collect())
                        .collect();
                    branches.push(LossBranch { ends, g });
                }
            }
        }

        let mut customer_nodes = Vec::new();
        let mut customer_node = Vec::new();
        let mut customer_phases = Vec::new();
        let mut customer_bus = Vec::new();
        for c in net.customers() {
            let bus = &net.buses()[c.bus];
            customer_bus.push(c.bus);
            match mode {
                ModelMode::Balanced => {
                    customer_phases.push(bus.phases.iter().collect());
                    let node = sens.index_of(c.bus, None);
                    let share = T::one() / T::from_usize_lossy(bus.phases.len());
                    customer_nodes.push(node.map(|k| vec![(k, share)]).unwrap_or_default());
                    customer_node.push(node);
                }
                ModelMode::Unbalanced => {
                    customer_phases.push(vec![c.phase]);
                    let node = sens.index_of(c.bus, Some(c.phase));
                    customer_nodes.push(node.map(|k| vec![(k, T::one())]).unwrap_or_default());
                    customer_node.push(node);
                }
            }
        }

        Ok(Self {
            mode,
            sens,
            zrot,
            branches,
            customer_nodes,
            customer_node,
            customer_phases,
            customer_bus,
            n_buses: net.n_buses(),
            base_kva: net.base_kva(),
            base_voltage: net.base_voltage(),
        })
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn sensitivities(&self) -> &SensitivityMatrices<T> {
        &self.sens
    }

    pub fn n_nodes(&self) -> usize {
        self.sens.len()
    }

    pub fn n_customers(&self) -> usize {
        self.customer_node.len()
    }

    pub fn base_voltage(&self) -> T {
        self.base_voltage
    }

    pub fn base_kva(&self) -> T {
        self.base_kva
    }

    /// Model node that carries the customer's voltage (`None` at the slack).
    pub fn customer_node(&self, customer: usize) -> Option<usize> {
        self.customer_node[customer]
    }

    /// Model nodes receiving the customer's injection and the share each gets.
    pub fn customer_shares(&self, customer: usize) -> &[(usize, T)] {
        &self.customer_nodes[customer]
    }

    /// Per-unit model-node injections from per-customer net injections (kVA).
    pub fn nodal_injections(&self, customer_kva: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(
            customer_kva.len(),
            self.n_customers(),
            "one value per customer"
        );
        let mut s = vec![Complex::new(T::zero(), T::zero()); self.n_nodes()];
        for (c, &kva) in customer_kva.iter().enumerate() {
            for &(k, share) in &self.customer_nodes[c] {
                s[k] += kva * share / self.base_kva;
            }
        }
        s
    }

    /// Coefficient of `conj(s_m)` in `V_k`.
    fn coeff(&self, k: usize, m: usize, vnom: &[Complex<T>], normalize: bool) -> Complex<T> {
        let z = self.zrot[(k, m)];
        if normalize {
            z / vnom[m].conj()
        } else {
            z
        }
    }

    /// Model voltages `V = V_nom + ΔV` (local frame, pu).
    pub fn predict(
        &self,
        vnom: &[Complex<T>],
        injections_pu: &[Complex<T>],
        normalize: bool,
    ) -> Vec<Complex<T>> {
        let n = self.n_nodes();
        assert_eq!(vnom.len(), n, "linearization point length");
        assert_eq!(injections_pu.len(), n, "injection length");
        (0..n)
            .map(|k| {
                let mut v = vnom[k];
                for (m, s) in injections_pu.iter().enumerate() {
                    if s.re != T::zero() || s.im != T::zero() {
                        v += self.coeff(k, m, vnom, normalize) * s.conj();
                    }
                }
                v
            })
            .collect()
    }

    fn global(&self, v_local: &[Complex<T>], r: NodeRef, angle: f64) -> Complex<T> {
        let local = match r {
            NodeRef::Slack => Complex::new(T::one(), T::zero()),
            NodeRef::Node(k) => v_local[k],
        };
        if angle == 0.0 {
            local
        } else {
            local * phasor::<T>(angle)
        }
    }

    /// Line losses in kW implied by model voltages.
    pub fn losses_kw(&self, v_local: &[Complex<T>]) -> T {
        let mut total = T::zero();
        for b in &self.branches {
            let d: Vec<Complex<T>> = b
                .ends
                .iter()
                .map(|&(f, t, a)| self.global(v_local, f, a) - self.global(v_local, t, a))
                .collect();
            for (i, di) in d.iter().enumerate() {
                for (j, dj) in d.iter().enumerate() {
                    total += b.g[i][j] * (di.re * dj.re + di.im * dj.im);
                }
            }
        }
        total * self.base_kva
    }

    /// Oracle injections for per-customer net injections (kVA): spread over
    /// the bus phases in balanced mode, on the customer's phase otherwise.
    pub fn oracle_injections(&self, customer_kva: &[Complex<T>]) -> Vec<PowerInjection<T>> {
        let mut out = Vec::new();
        for (c, &kva) in customer_kva.iter().enumerate() {
            let phases = &self.customer_phases[c];
            let share = T::one() / T::from_usize_lossy(phases.len());
            for &p in phases {
                let s = kva * share;
                out.push(PowerInjection::new(self.customer_bus[c], p, s.re, s.im));
            }
        }
        out
    }

    /// Oracle voltages mapped onto model nodes (local frame, pu). Balanced
    /// nodes take the mean over the bus phases.
    pub fn measured(&self, sol: &VoltageSolution<T>, net: &Network<T>) -> Vec<Complex<T>> {
        debug_assert_eq!(net.n_buses(), self.n_buses);
        self.sens
            .nodes()
            .iter()
            .map(|node| match node.phase {
                Some(p) => sol.local_pu(node.bus, p),
                None => {
                    let phases = net.buses()[node.bus].phases;
                    let sum = phases
                        .iter()
                        .fold(Complex::new(T::zero(), T::zero()), |acc, p| {
                            acc + sol.local_pu(node.bus, p)
                        });
                    sum / T::from_usize_lossy(phases.len())
                }
            })
            .collect()
    }
}

/// One coordinated inverter's inputs for a timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CicInverter<T> {
    pub customer: usize,
    /// Available PV power, kW.
    pub p_av: T,
    /// Rated apparent power, kVA.
    pub rating: T,
    /// Reactive limit per unit of rating (negative).
    pub q_min_pu: T,
    /// Adaptive voltage limit, volts.
    pub v_max: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct VarMap {
    p: Option<usize>,
    q: Option<usize>,
}

/// One timestep's convex program together with the data needed to map a
/// solution back to setpoints and voltages.
#[derive(Debug, Clone)]
pub struct CicProblem<T> {
    pub inverters: Vec<CicInverter<T>>,
    /// Customer demand at each inverter, kW.
    pub p_d: Vec<T>,
    pub q_d: Vec<T>,
    /// Upper curtailment bound `max(P_av − P_d, 0)`.
    pub curtail_ub: Vec<T>,
    /// Lower reactive bound, kVAr.
    pub q_lb: Vec<T>,
    pub alpha: T,
    pub cap: VoltageCap,
    pub program: ConvexProgram<T>,
    vars: Vec<VarMap>,
    owner: Vec<usize>,
    /// Model voltages with all decision variables at zero.
    pub v0: Vec<Complex<T>>,
    /// `∂V_k/∂x_v` for every model node and decision variable.
    pub jacobian: Vec<Vec<Complex<T>>>,
    settings: CicSettings,
    base_voltage: T,
    base_kva: T,
    model_losses: LossQuadratic<T>,
}

#[derive(Debug, Clone)]
struct LossQuadratic<T> {
    h: Matrix<T>,
    g: Vec<T>,
    c: T,
}

impl<T: Real> LossQuadratic<T> {
    fn eval(&self, x: &[T]) -> T {
        let hx = self.h.mul_vec(x);
        let quad: T = x.iter().zip(&hx).map(|(&a, &b)| a * b).sum();
        T::lit(0.5) * quad + self.g.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>() + self.c
    }
}

fn check_finite<T: Real>(v: T, what: &str) -> Result<(), CicError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CicError::InvalidInput(format!("{what} is not finite")))
    }
}

/// Builds the timestep program.
///
/// `demand` and `fixed_injection` are per-customer kVA (consumption and
/// uncontrolled generation respectively; `fixed_injection` may be empty).
pub fn assemble<T: Real>(
    model: &CicModel<T>,
    inverters: &[CicInverter<T>],
    demand: &[Complex<T>],
    fixed_injection: &[Complex<T>],
    point: &LinearizationPoint<T>,
    settings: &CicSettings,
) -> Result<CicProblem<T>, CicError> {
    settings.validate().map_err(CicError::InvalidInput)?;
    let nc = model.n_customers();
    if demand.len() != nc {
        return Err(CicError::InvalidInput(format!(
            "expected {nc} demand values, got {}",
            demand.len()
        )));
    }
    if !fixed_injection.is_empty() && fixed_injection.len() != nc {
        return Err(CicError::InvalidInput(format!(
            "expected {nc} fixed injections, got {}",
            fixed_injection.len()
        )));
    }
    if point.vnom.len() != model.n_nodes() {
        return Err(CicError::InvalidInput(format!(
            "linearization point has {} nodes, model has {}",
            point.vnom.len(),
            model.n_nodes()
        )));
    }
    for d in demand.iter().chain(fixed_injection) {
        check_finite(d.re, "demand")?;
        check_finite(d.im, "demand")?;
    }
    for v in &point.vnom {
        check_finite(v.re, "linearization voltage")?;
        check_finite(v.im, "linearization voltage")?;
    }
    let mut seen = vec![false; nc];
    for inv in inverters {
        if inv.customer >= nc {
            return Err(CicError::InvalidInput(format!(
                "inverter customer {} out of range",
                inv.customer
            )));
        }
        if std::mem::replace(&mut seen[inv.customer], true) {
            return Err(CicError::InvalidInput(format!(
                "customer {} has more than one inverter",
                inv.customer
            )));
        }
        for (v, what) in [
            (inv.p_av, "available power"),
            (inv.rating, "rating"),
            (inv.q_min_pu, "reactive limit"),
            (inv.v_max, "voltage limit"),
        ] {
            check_finite(v, what)?;
        }
        if !(inv.rating > T::zero()) {
            return Err(CicError::InvalidInput(
                "inverter rating must be positive".into(),
            ));
        }
        if inv.p_av < T::zero() {
            return Err(CicError::InvalidInput(
                "available power must be non-negative".into(),
            ));
        }
        if inv.p_av > inv.rating * (T::one() + T::lit(1e-12)) {
            return Err(CicError::InvalidInput(format!(
                "available power {} exceeds rating {}",
                inv.p_av, inv.rating
            )));
        }
        if inv.q_min_pu > T::zero() || inv.q_min_pu < -T::one() {
            return Err(CicError::InvalidInput(
                "q_min_pu must lie in [-1, 0]".into(),
            ));
        }
        if !(inv.v_max > T::zero()) {
            return Err(CicError::InvalidInput(
                "voltage limit must be positive".into(),
            ));
        }
    }

    let tol = T::lit(settings.fixed_tol);
    let mut vars = Vec::with_capacity(inverters.len());
    let mut curtail_ub = Vec::with_capacity(inverters.len());
    let mut q_lb = Vec::with_capacity(inverters.len());
    let mut p_d = Vec::with_capacity(inverters.len());
    let mut q_d = Vec::with_capacity(inverters.len());
    let mut n = 0;
    for inv in inverters {
        let d = demand[inv.customer];
        p_d.push(d.re);
        q_d.push(d.im);
        let ub = (inv.p_av - d.re).max(T::zero());
        let p = if ub > tol {
            n += 1;
            Some(n - 1)
        } else {
            None
        };
        let mut lo = inv.q_min_pu * inv.rating;
        if p.is_none() {
            let head = (inv.rating * inv.rating - inv.p_av * inv.p_av).max(T::zero());
            lo = lo.max(-head.sqrt());
        }
        let q = if lo < -tol {
            n += 1;
            Some(n - 1)
        } else {
            None
        };
        curtail_ub.push(if p.is_some() { ub } else { T::zero() });
        q_lb.push(if q.is_some() { lo } else { T::zero() });
        vars.push(VarMap { p, q });
    }

    // Fixed part of the nodal injections: loads, uncontrolled units, and the
    // full available power of every coordinated inverter.
    let mut fixed: Vec<Complex<T>> = demand.iter().map(|d| -*d).collect();
    for (c, f) in fixed_injection.iter().enumerate() {
        fixed[c] += *f;
    }
    for inv in inverters {
        fixed[inv.customer] += Complex::new(inv.p_av, T::zero());
    }
    let s0 = model.nodal_injections(&fixed);
    let vnom = &point.vnom;
    let v0 = model.predict(vnom, &s0, settings.normalize);

    let nn = model.n_nodes();
    let zero = Complex::new(T::zero(), T::zero());
    let mut jacobian = vec![vec![zero; n]; nn];
    let j_unit = Complex::new(T::zero(), T::one());
    for (inv, vm) in inverters.iter().zip(&vars) {
        for &(m, share) in model.customer_shares(inv.customer) {
            let scale = share / model.base_kva;
            for (k, row) in jacobian.iter_mut().enumerate() {
                let c = model.coeff(k, m, vnom, settings.normalize) * scale;
                // conj(−P_c + jQ) = −P_c − jQ
                if let Some(pv) = vm.p {
                    row[pv] -= c;
                }
                if let Some(qv) = vm.q {
                    row[qv] -= c * j_unit;
                }
            }
        }
    }

    let losses = loss_quadratic(model, &v0, &jacobian, n);
    let w_l = T::lit(settings.loss_weight);
    let mut h = Matrix::from_fn(n, n, |i, j| losses.h[(i, j)] * w_l);
    let mut g: Vec<T> = losses.g.iter().map(|&v| v * w_l).collect();
    let c = losses.c * w_l;
    let w_c = T::lit(settings.curtailment_weight);
    for vm in &vars {
        if let Some(pv) = vm.p {
            g[pv] += w_c;
        }
    }
    let alpha = T::lit(settings.alpha);
    if settings.alpha > 0.0 {
        let fair: Vec<(usize, T)> = vars
            .iter()
            .zip(&curtail_ub)
            .filter_map(|(vm, &e)| vm.p.map(|pv| (pv, e)))
            .collect();
        if !fair.is_empty() {
            let nf = T::from_usize_lossy(fair.len());
            let two = T::lit(2.0);
            for (a, &(i, ei)) in fair.iter().enumerate() {
                for (b, &(j, ej)) in fair.iter().enumerate() {
                    let delta = if a == b { T::one() / nf } else { T::zero() };
                    h[(i, j)] += two * alpha * (delta - T::one() / (nf * nf)) / (ei * ej);
                }
            }
        }
    }

    let mut constraints = Vec::new();
    let mut owner = Vec::new();
    let cap = settings.cap.unwrap_or(model.mode().default_cap());
    let vb = model.base_voltage();
    for (idx, ((inv, vm), (&ub, &lo))) in inverters
        .iter()
        .zip(&vars)
        .zip(curtail_ub.iter().zip(&q_lb))
        .enumerate()
    {
        if let Some(pv) = vm.p {
            constraints.push(Constraint::Lower {
                var: pv,
                bound: T::zero(),
            });
            constraints.push(Constraint::Upper { var: pv, bound: ub });
            owner.extend([idx, idx]);
        }
        if let Some(qv) = vm.q {
            constraints.push(Constraint::Lower { var: qv, bound: lo });
            constraints.push(Constraint::Upper {
                var: qv,
                bound: T::zero(),
            });
            owner.extend([idx, idx]);
            if vm.p.is_some() {
                constraints.push(Constraint::Disk {
                    p: vm.p,
                    q: qv,
                    p0: inv.p_av,
                    radius: inv.rating,
                });
                owner.push(idx);
            }
        }
        if let Some(k) = model.customer_node(inv.customer) {
            let re: Vec<T> = jacobian[k].iter().map(|c| c.re * vb).collect();
            let im: Vec<T> = jacobian[k].iter().map(|c| c.im * vb).collect();
            match cap {
                VoltageCap::RealPart => constraints.push(Constraint::Affine {
                    a: re,
                    b: v0[k].re * vb - inv.v_max,
                }),
                VoltageCap::Magnitude => {
                    let s = (T::lit(2.0) * inv.v_max).sqrt().recip();
                    let scale = |row: Vec<T>| row.into_iter().map(|v| v * s).collect::<Vec<T>>();
                    constraints.push(Constraint::SumSquares {
                        rows: vec![
                            (scale(re), v0[k].re * vb * s),
                            (scale(im), v0[k].im * vb * s),
                        ],
                        bound: inv.v_max * T::lit(0.5),
                    });
                }
            }
            owner.push(idx);
        }
    }

    Ok(CicProblem {
        inverters: inverters.to_vec(),
        p_d,
        q_d,
        curtail_ub,
        q_lb,
        alpha,
        cap,
        program: ConvexProgram {
            h,
            g,
            c,
            constraints,
        },
        vars,
        owner,
        v0,
        jacobian,
        settings: *settings,
        base_voltage: vb,
        base_kva: model.base_kva(),
        model_losses: losses,
    })
}

fn loss_quadratic<T: Real>(
    model: &CicModel<T>,
    v0: &[Complex<T>],
    jac: &[Vec<Complex<T>>],
    n: usize,
) -> LossQuadratic<T> {
    let zero = Complex::new(T::zero(), T::zero());
    let mut h = Matrix::zeros(n, n);
    let mut g = vec![T::zero(); n];
    let mut c = T::zero();
    let two = T::lit(2.0);
    let base = model.base_kva;
    for b in &model.branches {
        // ΔV per conductor as constant plus linear part, in the global frame.
        let mut consts = Vec::with_capacity(b.ends.len());
        let mut rows = Vec::with_capacity(b.ends.len());
        for &(f, t, a) in &b.ends {
            let rot = phasor::<T>(a);
            let mut k = zero;
            let mut row = vec![zero; n];
            for (r, sign) in [(f, T::one()), (t, -T::one())] {
                match r {
                    NodeRef::Slack => k += Complex::new(sign, T::zero()),
                    NodeRef::Node(i) => {
                        k += v0[i] * sign;
                        for (dst, src) in row.iter_mut().zip(&jac[i]) {
                            *dst += *src * sign;
                        }
                    }
                }
            }
            consts.push(k * rot);
            rows.push(row.into_iter().map(|v| v * rot).collect::<Vec<_>>());
        }
        for (p, (cp, ap)) in consts.iter().zip(&rows).enumerate() {
            for (q, (cq, aq)) in consts.iter().zip(&rows).enumerate() {
                let gpq = b.g[p][q] * base;
                if gpq == T::zero() {
                    continue;
                }
                c += gpq * (cp.re * cq.re + cp.im * cq.im);
                for i in 0..n {
                    g[i] += two * gpq * (cq.re * ap[i].re + cq.im * ap[i].im);
                    let (ar, ai) = (ap[i].re, ap[i].im);
                    if ar == T::zero() && ai == T::zero() {
                        continue;
                    }
                    let row = h.row_mut(i);
                    for j in 0..n {
                        row[j] += two * gpq * (ar * aq[j].re + ai * aq[j].im);
                    }
                }
            }
        }
    }
    LossQuadratic { h, g, c }
}

/// Certified result of one timestep.
#[derive(Debug, Clone)]
pub struct CicSolution<T> {
    /// Curtailment per inverter, kW.
    pub p_curt: Vec<T>,
    /// Reactive setpoint per inverter, kVAr (absorption negative).
    pub q: Vec<T>,
    /// Predicted voltages at every model node (local frame, pu).
    pub v_model: Vec<Complex<T>>,
    /// Weighted objective value.
    pub objective: T,
    /// Model-predicted line losses, kW.
    pub losses_kw: T,
    pub status: SolveStatus,
    pub iterations: usize,
    pub certificate: KktCertificate,
    /// Inverters owning a violated constraint when infeasible.
    pub violated: Vec<usize>,
}

impl<T: Real> CicProblem<T> {
    pub fn n_vars(&self) -> usize {
        self.program.dim()
    }

    fn pack(&self, p_curt: &[T], q: &[T]) -> Vec<T> {
        let mut x = vec![T::zero(); self.n_vars()];
        for (i, vm) in self.vars.iter().enumerate() {
            if let Some(pv) = vm.p {
                x[pv] = p_curt[i];
            }
            if let Some(qv) = vm.q {
                x[qv] = q[i];
            }
        }
        x
    }

    fn unpack(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        self.vars
            .iter()
            .map(|vm| {
                (
                    vm.p.map_or(T::zero(), |v| x[v]),
                    vm.q.map_or(T::zero(), |v| x[v]),
                )
            })
            .unzip()
    }

    /// Model voltages for given setpoints (local frame, pu).
    pub fn voltages(&self, p_curt: &[T], q: &[T]) -> Vec<Complex<T>> {
        let x = self.pack(p_curt, q);
        self.v0
            .iter()
            .zip(&self.jacobian)
            .map(|(&v, row)| row.iter().zip(&x).fold(v, |acc, (&c, &xi)| acc + c * xi))
            .collect()
    }

    /// Objective value for given setpoints.
    pub fn objective(&self, p_curt: &[T], q: &[T]) -> T {
        self.program.objective(&self.pack(p_curt, q))
    }

    /// Model losses (kW) for given setpoints.
    pub fn losses_kw(&self, p_curt: &[T], q: &[T]) -> T {
        self.model_losses.eval(&self.pack(p_curt, q))
    }

    /// Full curtailment with maximum reactive absorption.
    pub fn fallback_setpoints(&self) -> (Vec<T>, Vec<T>) {
        let p = self.curtail_ub.clone();
        let q = self
            .inverters
            .iter()
            .zip(&p)
            .zip(&self.vars)
            .map(|((inv, &pc), vm)| {
                if vm.q.is_none() {
                    return T::zero();
                }
                let out = inv.p_av - pc;
                let head = (inv.rating * inv.rating - out * out).max(T::zero()).sqrt();
                (inv.q_min_pu * inv.rating).max(-head)
            })
            .collect();
        (p, q)
    }

    pub fn settings(&self) -> &CicSettings {
        &self.settings
    }

    pub fn base_voltage(&self) -> T {
        self.base_voltage
    }

    pub fn base_kva(&self) -> T {
        self.base_kva
    }
}

/// Solves a timestep program. Infeasible programs return the fallback
/// setpoints (full curtailment) with status `Infeasible`.
pub fn solve_cic<T: Real>(p: &CicProblem<T>) -> CicSolution<T> {
    let start: Vec<T> = {
        let half = T::lit(0.5);
        let p_mid: Vec<T> = p.curtail_ub.iter().map(|&u| u * half).collect();
        let q_mid: Vec<T> = p.q_lb.iter().map(|&l| l * half).collect();
        p.pack(&p_mid, &q_mid)
    };
    let res = ipm::solve(&p.program, &start, &p.settings.ipm);
    let (p_curt, q) = match res.status {
        SolveStatus::Infeasible => p.fallback_setpoints(),
        _ => p.unpack(&snap_to_bounds(p, &res.x)),
    };
    let mut violated: Vec<usize> = res.violated.iter().map(|&i| p.owner[i]).collect();
    violated.dedup();
    let v_model = p.voltages(&p_curt, &q);
    CicSolution {
        objective: p.objective(&p_curt, &q),
        losses_kw: p.losses_kw(&p_curt, &q),
        p_curt,
        q,
        v_model,
        status: res.status,
        iterations: res.iterations,
        certificate: res.certificate,
        violated,
    }
}

/// Moves interior-point coordinates lying within `SNAP_TOL` of a bound onto
/// it, provided the snapped point stays feasible to the KKT tolerance.
fn snap_to_bounds<T: Real>(p: &CicProblem<T>, x: &[T]) -> Vec<T> {
    let tol = T::lit(SNAP_TOL);
    let mut y = x.to_vec();
    for c in &p.program.constraints {
        match *c {
            Constraint::Upper { var, bound } | Constraint::Lower { var, bound }
                if (y[var] - bound).abs() <= tol =>
            {
                y[var] = bound;
            }
            _ => {}
        }
    }
    if p.program.max_violation(&y) <= T::lit(p.settings.ipm.kkt_tol) {
        y
    } else {
        x.to_vec()
    }
}

/// Distance (kW or kVAr) within which solver output is snapped to a bound.
pub const SNAP_TOL: f64 = 1e-7;

/// `α·(1/C)·Σ (r_h − r̄)²` with `r_h = P_h / excess_h`, over customers with
/// positive excess.
pub fn fairness_penalty<T: Real>(p_curt: &[T], excess: &[T], alpha: T) -> T {
    assert_eq!(p_curt.len(), excess.len(), "one excess per curtailment");
    let ratios: Vec<T> = p_curt
        .iter()
        .zip(excess)
        .filter_map(|(&p, &e)| {
            if e > T::zero() {
                Some(p / e)
            } else {
                log::debug!("customer without excess excluded from fairness term");
                None
            }
        })
        .collect();
    if ratios.is_empty() {
        return T::zero();
    }
    let n = T::from_usize_lossy(ratios.len());
    let mean = ratios.iter().copied().sum::<T>() / n;
    alpha * ratios.iter().map(|&r| (r - mean) * (r - mean)).sum::<T>() / n
}

/// Lowers the limit by the overshoot of the measured voltage above `v_trip`.
pub fn update_vmax<T: Real>(v_max: T, v_measured: T, v_trip: T) -> T {
    if v_measured > v_trip {
        v_max - (v_measured - v_trip)
    } else {
        v_max
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{BusSpec, LineSpec, PhaseSet};

    fn two_bus(length_km: f64, cable: &str) -> Network<f64> {
        Network::build(
            vec![
                BusSpec {
                    id: 0,
                    phases: PhaseSet::ABC,
                    customers: vec![],
                },
                BusSpec {
                    id: 1,
                    phases: PhaseSet::ABC,
                    customers: vec![(0, Some(Phase::A))],
                },
            ],
            vec![LineSpec {
                from: 0,
                to: 1,
                length_km,
                cable: cable.into(),
            }],
            vec![],
            0,
            400.0,
            230.0,
            100.0,
        )
        .unwrap()
    }

    fn inverter(p_av: f64) -> CicInverter<f64> {
        CicInverter {
            customer: 0,
            p_av,
            rating: 5.5,
            q_min_pu: -0.44,
            v_max: 257.0,
        }
    }

    fn problem(net: &Network<f64>, p_av: f64, p_d: f64) -> CicProblem<f64> {
        let model = CicModel::new(net, ModelMode::Unbalanced).unwrap();
        let point = LinearizationPoint::flat(model.n_nodes(), 0.4);
        assemble(
            &model,
            &[inverter(p_av)],
            &[Complex::new(p_d, 0.328 * p_d)],
            &[],
            &point,
            &CicSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn curtailment_bounds() {
        let net = two_bus(0.05, "ow95");
        assert_eq!(problem(&net, 3.0, 5.0).curtail_ub, vec![0.0]);
        assert!((problem(&net, 5.0, 0.8).curtail_ub[0] - 4.2).abs() < 1e-12);
    }

    #[test]
    fn reactive_range_limited_by_rating() {
        let net = two_bus(0.05, "ow95");
        let p = problem(&net, 5.0, 5.0);
        let expect = -(5.5f64 * 5.5 - 25.0).sqrt();
        assert!((p.q_lb[0] - expect).abs() < 1e-12);
        assert!(expect > -2.42);
    }

    #[test]
    fn empty_fleet_objective_is_baseline_losses() {
        let net = two_bus(0.2, "ow95");
        let model = CicModel::new(&net, ModelMode::Unbalanced).unwrap();
        let point = LinearizationPoint::flat(model.n_nodes(), 0.4);
        let demand = [Complex::new(2.0, 0.656)];
        let p = assemble(&model, &[], &demand, &[], &point, &CicSettings::default()).unwrap();
        let sol = solve_cic(&p);
        assert_eq!(p.n_vars(), 0);
        let v = model.predict(&point.vnom, &model.nodal_injections(&[-demand[0]]), true);
        assert!((sol.objective - model.losses_kw(&v)).abs() < 1e-12);
        assert!(sol.objective > 0.0);
    }

    #[test]
    fn short_cable_has_interior_optimum() {
        let net = two_bus(0.02, "ug240");
        let sol = solve_cic(&problem(&net, 4.0, 0.5));
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.p_curt[0].abs() < 1e-6);
        assert!(sol.q[0].abs() < 1e-6);
        assert!(sol.certificate.residual() <= 1e-6);
    }

    #[test]
    fn long_cable_activates_voltage_cap() {
        let net = two_bus(3.0, "ow95");
        let p = problem(&net, 5.0, 0.2);
        let free = p.voltages(&[0.0], &[0.0])[0].re * 230.0;
        assert!(free > 257.0, "{free}");
        let sol = solve_cic(&p);
        assert_eq!(sol.status, SolveStatus::Optimal);
        let v = sol.v_model[0].norm() * 230.0;
        assert!((v - 257.0).abs() < 1e-4, "{v}");
        assert!(sol.p_curt[0] > 0.0 || sol.q[0] < 0.0);
        let (pf, qf) = p.fallback_setpoints();
        assert!(sol.objective < p.objective(&pf, &qf));
    }

    #[test]
    fn infeasible_program_falls_back() {
        let net = two_bus(0.6, "ow95");
        let model = CicModel::new(&net, ModelMode::Unbalanced).unwrap();
        let point = LinearizationPoint::flat(model.n_nodes(), 0.4);
        let mut inv = inverter(1.0);
        inv.v_max = 200.0;
        let p = assemble(
            &model,
            &[inv],
            &[Complex::new(0.5, 0.164)],
            &[],
            &point,
            &CicSettings::default(),
        )
        .unwrap();
        let sol = solve_cic(&p);
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert_eq!(sol.violated, vec![0]);
        assert!((sol.p_curt[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn assemble_rejects_bad_inputs() {
        let net = two_bus(0.1, "ow95");
        let model = CicModel::new(&net, ModelMode::Unbalanced).unwrap();
        let point = LinearizationPoint::flat(model.n_nodes(), 0.4);
        let demand = [Complex::new(0.5, 0.1)];
        let s = CicSettings::default();
        let mut inv = inverter(1.0);
        inv.rating = -1.0;
        assert!(assemble(&model, &[inv], &demand, &[], &point, &s).is_err());
        let mut inv = inverter(1.0);
        inv.p_av = f64::NAN;
        assert!(assemble(&model, &[inv], &demand, &[], &point, &s).is_err());
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(fairness_penalty(&[1.0, 2.0], &[2.0, 4.0], 5.0), 0.0);
        assert!((fairness_penalty(&[0.0f64, 3.0], &[2.0, 3.0], 1.0) - 0.25).abs() < 1e-15);
        assert_eq!(fairness_penalty(&[1.0, 0.0], &[0.0, 2.0], 1.0), 0.0);
    }

    #[test]
    fn vmax_update() {
        assert_eq!(update_vmax(257.0, 256.0, 257.0), 257.0);
        assert_eq!(update_vmax(257.0, 258.0, 257.0), 256.0);
        let once = update_vmax(257.0, 258.0, 257.0);
        assert_eq!(update_vmax(once, 258.0, 257.0), 255.0);
    }
}
