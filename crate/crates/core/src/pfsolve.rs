//! Three-phase backward/forward sweep power flow for radial feeders.
//!
//! Loads are constant-power; the slack holds a balanced 1 pu set at
//! 0°/−120°/+120°. Segment coupling uses the full phase impedance matrix.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::invert_block;
use crate::netmodel::{Network, Phase};
use crate::scalar::{phasor, Complex, Real};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error(
        "power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)"
    )]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("segment {line} has zero impedance")]
    SingularSegment { line: usize },
    #[error("injection at bus {bus} phase {phase}: {reason}")]
    InvalidInjection {
        bus: usize,
        phase: Phase,
        reason: &'static str,
    },
    #[error("tolerance must be positive")]
    InvalidTolerance,
}

/// Complex power injected at one bus phase. Positive = into the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerInjection<T> {
    pub bus: usize,
    pub phase: Phase,
    pub p_kw: T,
    pub q_kvar: T,
}

impl<T: Real> PowerInjection<T> {
    pub fn new(bus: usize, phase: Phase, p_kw: T, q_kvar: T) -> Self {
        Self {
            bus,
            phase,
            p_kw,
            q_kvar,
        }
    }

    /// A consumption of `p_kw + j q_kvar`.
    pub fn load(bus: usize, phase: Phase, p_kw: T, q_kvar: T) -> Self {
        Self::new(bus, phase, -p_kw, -q_kvar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerFlowSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Converged bus voltages. Values are stored per unit in the Cartesian frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageSolution<T> {
    voltages: Vec<[Complex<T>; 3]>,
    branch_currents: Vec<[Complex<T>; 3]>,
    base_voltage: T,
    pub iterations: usize,
    /// Largest per-node complex power mismatch at exit, pu.
    pub max_mismatch: T,
}

impl<T: Real> VoltageSolution<T> {
    pub fn voltage_pu(&self, bus: usize, phase: Phase) -> Complex<T> {
        self.voltages[bus][phase.index()]
    }

    pub fn voltage_volts(&self, bus: usize, phase: Phase) -> Complex<T> {
        self.voltage_pu(bus, phase) * self.base_voltage
    }

    pub fn magnitude_volts(&self, bus: usize, phase: Phase) -> T {
        self.voltage_volts(bus, phase).norm()
    }

    /// Voltage rotated into the phase's own frame (nominal = 1 + 0j).
    pub fn local_pu(&self, bus: usize, phase: Phase) -> Complex<T> {
        self.voltage_pu(bus, phase) * phasor::<T>(-phase.angle_deg())
    }

    /// Current in each segment, parent to child, per unit.
    pub fn branch_current_pu(&self, line: usize) -> [Complex<T>; 3] {
        self.branch_currents[line]
    }

    /// Writes `bus,phase,re,im,magnitude` rows (volts).
    pub fn write_csv<W: Write>(&self, net: &Network<T>, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bus", "phase", "re", "im", "magnitude"])?;
        for (b, bus) in net.buses().iter().enumerate() {
            for p in bus.phases.iter() {
                let v = self.voltage_volts(b, p);
                w.write_record([
                    bus.id.to_string(),
                    p.to_string(),
                    format!("{}", v.re),
                    format!("{}", v.im),
                    format!("{}", v.norm()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Reusable sweep solver holding per-unit segment impedances and conductances.
#[derive(Debug, Clone)]
pub struct PowerFlow<'a, T> {
    net: &'a Network<T>,
    z_pu: Vec<[[Complex<T>; 3]; 3]>,
    g_pu: Vec<[[T; 3]; 3]>,
    slack_ref: [Complex<T>; 3],
}

impl<'a, T: Real> PowerFlow<'a, T> {
    pub fn new(net: &'a Network<T>) -> Result<Self, PowerFlowError> {
        let zb = net.base_impedance();
        let zero = Complex::new(T::zero(), T::zero());
        let mut z_pu = Vec::with_capacity(net.lines().len());
        let mut g_pu = Vec::with_capacity(net.lines().len());
        for (li, line) in net.lines().iter().enumerate() {
            let z = net.segment_z(li);
            let mut zp = [[zero; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    zp[i][j] = z[i][j] / zb;
                }
            }
            let phases: Vec<usize> = line.phases.iter().map(Phase::index).collect();
            let largest = phases
                .iter()
                .map(|&i| zp[i][i].norm())
                .fold(T::zero(), T::max);
            if !(largest > T::epsilon() * T::epsilon()) {
                return Err(PowerFlowError::SingularSegment { line: li });
            }
            let block: Vec<Vec<Complex<T>>> = phases
                .iter()
                .map(|&i| phases.iter().map(|&j| zp[i][j]).collect())
                .collect();
            let y = invert_block(&block).ok_or(PowerFlowError::SingularSegment { line: li })?;
            let mut g = [[T::zero(); 3]; 3];
            for (a, &i) in phases.iter().enumerate() {
                for (b, &j) in phases.iter().enumerate() {
                    g[i][j] = y[a][b].re;
                }
            }
            z_pu.push(zp);
            g_pu.push(g);
        }
        let slack_ref = [
            phasor::<T>(Phase::A.angle_deg()),
            phasor::<T>(Phase::B.angle_deg()),
            phasor::<T>(Phase::C.angle_deg()),
        ];
        Ok(Self {
            net,
            z_pu,
            g_pu,
            slack_ref,
        })
    }

    pub fn network(&self) -> &'a Network<T> {
        self.net
    }

    /// Per-unit conductance block `Re{Z⁻¹}` of a segment (zeros outside its phases).
    pub fn segment_conductance(&self, line: usize) -> &[[T; 3]; 3] {
        &self.g_pu[line]
    }

    pub fn segment_impedance_pu(&self, line: usize) -> &[[Complex<T>; 3]; 3] {
        &self.z_pu[line]
    }

    /// Sums injections into per-node per-unit powers, validating bus/phase.
    pub fn nodal_powers(
        &self,
        injections: &[PowerInjection<T>],
    ) -> Result<Vec<[Complex<T>; 3]>, PowerFlowError> {
        let zero = Complex::new(T::zero(), T::zero());
        let mut s = vec![[zero; 3]; self.net.n_buses()];
        let base = self.net.base_kva();
        for inj in injections {
            let bad = |reason| PowerFlowError::InvalidInjection {
                bus: inj.bus,
                phase: inj.phase,
                reason,
            };
            if inj.bus >= self.net.n_buses() {
                return Err(bad("unknown bus"));
            }
            if !self.net.buses()[inj.bus].phases.contains(inj.phase) {
                return Err(bad("phase not present at bus"));
            }
            if !inj.p_kw.is_finite() || !inj.q_kvar.is_finite() {
                return Err(bad("non-finite power"));
            }
            s[inj.bus][inj.phase.index()] += Complex::new(inj.p_kw, inj.q_kvar) / base;
        }
        Ok(s)
    }

    pub fn solve(
        &self,
        injections: &[PowerInjection<T>],
        settings: PowerFlowSettings,
    ) -> Result<VoltageSolution<T>, PowerFlowError> {
        if !(settings.tol > 0.0) {
            return Err(PowerFlowError::InvalidTolerance);
        }
        let s = self.nodal_powers(injections)?;
        let net = self.net;
        let n = net.n_buses();
        let zero = Complex::new(T::zero(), T::zero());
        let tol = T::lit(settings.tol);

        let mut v = vec![[zero; 3]; n];
        for (b, bus) in net.buses().iter().enumerate() {
            for p in bus.phases.iter() {
                v[b][p.index()] = self.slack_ref[p.index()];
            }
        }
        let mut current = vec![[zero; 3]; n];
        let mut branch = vec![[zero; 3]; net.lines().len()];
        let order = net.bfs_order();
        let mut mismatch = T::infinity();

        for iter in 1..=settings.max_iter {
            for (b, bus) in net.buses().iter().enumerate() {
                for p in bus.phases.iter() {
                    let k = p.index();
                    current[b][k] = (s[b][k] / v[b][k]).conj();
                }
            }
            // Backward sweep: accumulate subtree injections.
            for &b in order.iter().rev() {
                let Some(li) = net.parent_line(b) else {
                    continue;
                };
                let mut j = [zero; 3];
                for k in 0..3 {
                    j[k] = -current[b][k];
                }
                for &c in net.children(b) {
                    let cl = net.parent_line(c).unwrap();
                    for k in 0..3 {
                        j[k] += branch[cl][k];
                    }
                }
                branch[li] = j;
            }
            // Forward sweep.
            let mut next = v.clone();
            for &b in order.iter().skip(1) {
                let li = net.parent_line(b).unwrap();
                let line = &net.lines()[li];
                let z = &self.z_pu[li];
                for p in line.phases.iter() {
                    let i = p.index();
                    let mut drop = zero;
                    for q in line.phases.iter() {
                        drop += z[i][q.index()] * branch[li][q.index()];
                    }
                    next[b][i] = next[line.from_bus][i] - drop;
                }
            }
            mismatch = T::zero();
            for (b, bus) in net.buses().iter().enumerate() {
                if b == net.slack() {
                    continue;
                }
                for p in bus.phases.iter() {
                    let k = p.index();
                    let m = (s[b][k] - next[b][k] * current[b][k].conj()).norm();
                    if !m.is_finite() {
                        return Err(PowerFlowError::NonConvergence {
                            iterations: iter,
                            mismatch: f64::INFINITY,
                        });
                    }
                    mismatch = mismatch.max(m);
                }
            }
            v = next;
            if mismatch <= tol {
                return Ok(VoltageSolution {
                    voltages: v,
                    branch_currents: branch,
                    base_voltage: net.base_voltage(),
                    iterations: iter,
                    max_mismatch: mismatch,
                });
            }
        }
        Err(PowerFlowError::NonConvergence {
            iterations: settings.max_iter,
            mismatch: mismatch.as_f64(),
        })
    }

    /// Exact segment losses in kW: Σ ΔVᴴ·Re{Z⁻¹}·ΔV over segments.
    pub fn line_losses(&self, solution: &VoltageSolution<T>) -> T {
        let net = self.net;
        let mut total = T::zero();
        for (li, line) in net.lines().iter().enumerate() {
            let g = &self.g_pu[li];
            let mut dv = [Complex::new(T::zero(), T::zero()); 3];
            for p in line.phases.iter() {
                dv[p.index()] =
                    solution.voltage_pu(line.from_bus, p) - solution.voltage_pu(line.to_bus, p);
            }
            for i in line.phases.iter() {
                for j in line.phases.iter() {
                    let (a, b) = (dv[i.index()], dv[j.index()]);
                    total += g[i.index()][j.index()] * (a.re * b.re + a.im * b.im);
                }
            }
        }
        total * net.base_kva()
    }

    /// Three-phase complex power leaving the slack bus, kVA.
    pub fn slack_power(&self, solution: &VoltageSolution<T>) -> Complex<T> {
        let net = self.net;
        let slack = net.slack();
        let mut s = Complex::new(T::zero(), T::zero());
        for &c in net.children(slack) {
            let li = net.parent_line(c).unwrap();
            for p in net.lines()[li].phases.iter() {
                s += solution.voltage_pu(slack, p)
                    * solution.branch_current_pu(li)[p.index()].conj();
            }
        }
        s * net.base_kva()
    }
}

/// Solves the power flow once; see [`PowerFlow`] for repeated solves.
pub fn solve_power_flow<T: Real>(
    network: &Network<T>,
    injections: &[PowerInjection<T>],
    tol: f64,
    max_iter: usize,
) -> Result<VoltageSolution<T>, PowerFlowError> {
    PowerFlow::new(network)?.solve(injections, PowerFlowSettings { tol, max_iter })
}

/// Exact line losses (kW) of a converged solution.
pub fn line_losses_exact<T: Real>(network: &Network<T>, solution: &VoltageSolution<T>) -> T {
    PowerFlow::new(network)
        .map(|pf| pf.line_losses(solution))
        .unwrap_or_else(|_| T::zero())
}

/// Magnitude of the three-phase power through the transformer, kVA.
pub fn slack_apparent_power<T: Real>(solution: &VoltageSolution<T>, network: &Network<T>) -> T {
    PowerFlow::new(network)
        .map(|pf| pf.slack_power(solution).norm())
        .unwrap_or_else(|_| T::zero())
}
