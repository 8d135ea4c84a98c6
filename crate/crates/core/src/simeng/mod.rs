//! Time-series simulation of one day per scenario for every control mode,
//! plus the metrics and sweeps built on top of it.

pub mod metrics;
pub mod profiles;
pub mod scenarios;
pub mod sweep;

use std::fmt;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cicopt::{
    assemble, solve_cic, update_vmax, CicError, CicInverter, CicModel, CicSettings, ModelMode,
    SolveStatus,
};
use crate::controllers::{
    injected_power, legacy_power, update_trip_state, DroopSettings, InverterKind, InverterState,
    TripEventKind,
};
use crate::linmodel::{update_vnom, LinearizationPoint};
use crate::netmodel::{Network, NetworkError, Phase};
use crate::pfsolve::{
    PowerFlow, PowerFlowError, PowerFlowSettings, PowerInjection, VoltageSolution,
};
use crate::scalar::{Complex, Real};

pub use metrics::{
    hosting_capacity, relative_error_sigma, transformer_peak, utilized_power, HostingCapacity,
    SigmaReport, Utilized,
};
pub use profiles::{
    interpolate_profile, synthetic_profiles, Profiles, HORIZON_MINUTES, HORIZON_START,
};
pub use scenarios::{generate_scenarios, Placement, Scenario};
pub use sweep::{run_sweep, RunSummary, SweepResult, SweepRow, SweepSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Cic(#[from] CicError),
    #[error("profile error: {0}")]
    Profile(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error("power flow failed at minute {t}: {source}")]
    Step { t: usize, source: PowerFlowError },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    Legacy,
    Autonomous,
    Cic,
    CicFair,
}

impl ControlMode {
    pub const ALL: [ControlMode; 4] = [
        ControlMode::Legacy,
        ControlMode::Autonomous,
        ControlMode::Cic,
        ControlMode::CicFair,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlMode::Legacy => "legacy",
            ControlMode::Autonomous => "autonomous",
            ControlMode::Cic => "cic",
            ControlMode::CicFair => "cic-fair",
        }
    }

    pub fn is_coordinated(self) -> bool {
        matches!(self, ControlMode::Cic | ControlMode::CicFair)
    }
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControlMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControlMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!("unknown mode `{s}` (expected legacy, autonomous, cic, cic-fair)")
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub mode: ControlMode,
    pub model: ModelMode,
    pub droop: DroopSettings,
    pub cic: CicSettings,
    /// Fairness weight used in `cic-fair` mode.
    pub fair_alpha: f64,
    /// Inverter rating, kVA.
    pub rating_kva: f64,
    /// Linearization damping.
    pub eta: f64,
    /// Reactive demand per unit of active demand.
    pub reactive_ratio: f64,
    pub power_flow: PowerFlowSettings,
    /// Seed of the trip/reconnect sampling stream.
    pub seed: u64,
    /// Curtailment above this (kW) flags a run as curtailing.
    pub curtailment_threshold_kw: f64,
    /// Iterate droop setpoints to a power-flow fixed point within each minute.
    pub settle_droop: bool,
    pub settle_tol_v: f64,
    pub settle_max_iter: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            mode: ControlMode::Cic,
            model: ModelMode::Unbalanced,
            droop: DroopSettings::default(),
            cic: CicSettings::default(),
            fair_alpha: 1.0,
            rating_kva: 5.5,
            eta: 0.4,
            reactive_ratio: 0.328,
            power_flow: PowerFlowSettings::default(),
            seed: 1,
            curtailment_threshold_kw: 1e-3,
            settle_droop: true,
            settle_tol_v: 0.01,
            settle_max_iter: 200,
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<(), SimError> {
        self.droop.validate().map_err(SimError::Settings)?;
        self.cic.validate().map_err(SimError::Settings)?;
        if !(self.fair_alpha.is_finite() && self.fair_alpha >= 0.0) {
            return Err(SimError::Settings("fair_alpha must be non-negative".into()));
        }
        if !(self.rating_kva > 0.0 && self.rating_kva.is_finite()) {
            return Err(SimError::Settings("rating_kva must be positive".into()));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(SimError::Settings("eta must lie in (0, 1]".into()));
        }
        if !(self.reactive_ratio.is_finite() && self.reactive_ratio >= 0.0) {
            return Err(SimError::Settings(
                "reactive_ratio must be non-negative".into(),
            ));
        }
        if !(self.settle_tol_v > 0.0) || self.settle_max_iter == 0 {
            return Err(SimError::Settings(
                "droop settling tolerance must be positive".into(),
            ));
        }
        Ok(())
    }

    /// CIC settings with the fairness weight resolved for the mode.
    pub fn effective_cic(&self) -> CicSettings {
        let mut c = self.cic;
        c.alpha = if self.mode == ControlMode::CicFair {
            self.fair_alpha
        } else {
            0.0
        };
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: usize,
    /// Position of the inverter in [`DayResult::pv_customers`].
    pub inverter: usize,
    pub event: TripEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub t: usize,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
    pub n_vars: usize,
}

/// Time-indexed outputs of one simulated day. Matrices are `[minute][..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DayResult {
    pub mode: ControlMode,
    pub model: ModelMode,
    pub pv_customers: Vec<usize>,
    /// `(bus id, phase)` per voltage column.
    pub nodes: Vec<(u64, Phase)>,
    /// Oracle voltage magnitudes, volts.
    pub v_oracle: Vec<Vec<f64>>,
    /// Linear-model voltage magnitudes (coordinated modes), volts.
    pub v_model: Option<Vec<Vec<f64>>>,
    /// Oracle voltage at each inverter's connection, volts.
    pub v_inverter: Vec<Vec<f64>>,
    pub p_av: Vec<Vec<f64>>,
    /// Active power delivered by the inverter, kW.
    pub p_output: Vec<Vec<f64>>,
    pub p_curt: Vec<Vec<f64>>,
    /// Part of the output exceeding the customer's own demand, kW.
    pub p_export: Vec<Vec<f64>>,
    /// Part of the output consumed on site, kW.
    pub p_self: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub losses_kw: Vec<f64>,
    pub slack_kva: Vec<f64>,
    pub events: Vec<EventRecord>,
    pub solver: Vec<SolverRecord>,
    /// Customer phase per inverter (for per-phase CSV attribution).
    inverter_nodes: Vec<usize>,
}

fn kwh(series: &[Vec<f64>]) -> f64 {
    series
        .iter()
        .map(|row| row.iter().sum::<f64>())
        .sum::<f64>()
        / 60.0
}

impl DayResult {
    pub fn minutes(&self) -> usize {
        self.losses_kw.len()
    }

    pub fn available_kwh(&self) -> f64 {
        kwh(&self.p_av)
    }

    pub fn curtailed_kwh(&self) -> f64 {
        kwh(&self.p_curt)
    }

    pub fn losses_kwh(&self) -> f64 {
        self.losses_kw.iter().sum::<f64>() / 60.0
    }

    /// True when any inverter is curtailed by more than `threshold` kW.
    pub fn curtails(&self, threshold: f64) -> bool {
        self.p_curt.iter().flatten().any(|&p| p > threshold)
    }

    pub fn event_count(&self, kind: TripEventKind) -> usize {
        self.events.iter().filter(|e| e.event == kind).count()
    }

    /// Longest run of consecutive minutes any inverter spends above `v`.
    pub fn longest_run_above(&self, v: f64) -> usize {
        let n = self.pv_customers.len();
        let mut best = 0;
        let mut run = vec![0usize; n];
        for row in &self.v_inverter {
            for (r, &x) in run.iter_mut().zip(row) {
                *r = if x > v { *r + 1 } else { 0 };
                best = best.max(*r);
            }
        }
        best
    }

    /// `t,bus,phase,v_model,v_oracle,p_inj,p_curt,q,losses_kw,slack_kva`;
    /// inverter quantities are summed per connection node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let io = |e: csv::Error| SimError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "bus",
            "phase",
            "v_model",
            "v_oracle",
            "p_inj",
            "p_curt",
            "q",
            "losses_kw",
            "slack_kva",
        ])
        .map_err(io)?;
        let n = self.nodes.len();
        for t in 0..self.minutes() {
            let mut p_inj = vec![0.0; n];
            let mut p_curt = vec![0.0; n];
            let mut q = vec![0.0; n];
            for (i, &node) in self.inverter_nodes.iter().enumerate() {
                p_inj[node] += self.p_output[t][i];
                p_curt[node] += self.p_curt[t][i];
                q[node] += self.q[t][i];
            }
            for (k, &(bus, phase)) in self.nodes.iter().enumerate() {
                let vm = self
                    .v_model
                    .as_ref()
                    .map_or(String::new(), |v| format!("{:.6}", v[t][k]));
                w.write_record([
                    t.to_string(),
                    bus.to_string(),
                    phase.to_string(),
                    vm,
                    format!("{:.6}", self.v_oracle[t][k]),
                    format!("{:.6}", p_inj[k]),
                    format!("{:.6}", p_curt[k]),
                    format!("{:.6}", q[k]),
                    format!("{:.6}", self.losses_kw[t]),
                    format!("{:.6}", self.slack_kva[t]),
                ])
                .map_err(io)?;
            }
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))
    }

    /// `t,inverter,event` with the inverter given as its customer position.
    pub fn write_events_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let io = |e: csv::Error| SimError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "inverter", "event"]).map_err(io)?;
        for e in &self.events {
            w.write_record([
                e.t.to_string(),
                self.pv_customers[e.inverter].to_string(),
                e.event.as_str().to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))
    }

    /// One JSON object per solve.
    pub fn write_solver_jsonl<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        for r in &self.solver {
            let line = serde_json::to_string(r).map_err(|e| SimError::Io(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| SimError::Io(e.to_string()))?;
        }
        Ok(())
    }
}

/// Per-customer PV and load split across oracle phases.
struct PhaseSplit<'a, T> {
    net: &'a Network<T>,
    balanced: bool,
}

impl<T: Real> PhaseSplit<'_, T> {
    fn injections(&self, customer_kva: &[Complex<T>]) -> Vec<PowerInjection<T>> {
        let mut out = Vec::with_capacity(customer_kva.len() * 3);
        for (c, &s) in customer_kva.iter().enumerate() {
            let cust = self.net.customers()[c];
            if self.balanced {
                let phases = self.net.buses()[cust.bus].phases;
                let share = T::one() / T::from_usize_lossy(phases.len());
                for p in phases.iter() {
                    out.push(PowerInjection::new(cust.bus, p, s.re * share, s.im * share));
                }
            } else {
                out.push(PowerInjection::new(cust.bus, cust.phase, s.re, s.im));
            }
        }
        out
    }
}

fn check_scenario<T: Real>(net: &Network<T>, pv: &[usize]) -> Result<(), SimError> {
    let n = net.customers().len();
    let mut seen = vec![false; n];
    for &c in pv {
        if c >= n {
            return Err(SimError::Scenario(format!(
                "PV customer {c} out of range (have {n})"
            )));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(SimError::Scenario(format!("PV customer {c} listed twice")));
        }
    }
    Ok(())
}

/// Simulates one day for the PV customers `pv_customers` under `settings`.
pub fn run_day<T: Real>(
    net: &Network<T>,
    pv_customers: &[usize],
    profiles: &Profiles,
    settings: &SimSettings,
) -> Result<DayResult, SimError> {
    settings.validate()?;
    profiles.validate()?;
    check_scenario(net, pv_customers)?;
    let minutes = profiles.minutes();
    let nc = net.customers().len();
    let ni = pv_customers.len();
    let mode = settings.mode;
    let balanced = settings.model == ModelMode::Balanced;
    let pf = PowerFlow::new(net)?;
    let split = PhaseSplit { net, balanced };
    let vb = net.base_voltage().as_f64();
    let rating = T::lit(settings.rating_kva);

    let mut nodes = Vec::new();
    let mut node_index = vec![[usize::MAX; 3]; net.n_buses()];
    for (b, bus) in net.buses().iter().enumerate() {
        for p in bus.phases.iter() {
            node_index[b][p.index()] = nodes.len();
            nodes.push((b, p));
        }
    }
    let inverter_nodes: Vec<usize> = pv_customers
        .iter()
        .map(|&c| {
            let cu = net.customers()[c];
            node_index[cu.bus][cu.phase.index()]
        })
        .collect();

    let cic_model = if mode.is_coordinated() {
        Some(CicModel::new(net, settings.model)?)
    } else {
        None
    };
    let cic_settings = settings.effective_cic();
    let mut point = cic_model
        .as_ref()
        .map(|m| LinearizationPoint::flat(m.n_nodes(), T::lit(settings.eta)));
    let v_trip = T::lit(settings.droop.v_trip);
    let mut v_max: Vec<T> = vec![v_trip; ni];

    let mut fleet: Vec<InverterState<T>> = (0..ni).map(|_| InverterState::new(rating)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut v_prev: Vec<T> = vec![T::lit(settings.droop.v_nom); ni];
    let kind = match mode {
        ControlMode::Legacy => InverterKind::Legacy,
        _ => InverterKind::Autonomous,
    };

    let mut res = DayResult {
        mode,
        model: settings.model,
        pv_customers: pv_customers.to_vec(),
        nodes: nodes.iter().map(|&(b, p)| (net.buses()[b].id, p)).collect(),
        v_oracle: Vec::with_capacity(minutes),
        v_model: cic_model.as_ref().map(|_| Vec::with_capacity(minutes)),
        v_inverter: Vec::with_capacity(minutes),
        p_av: Vec::with_capacity(minutes),
        p_output: Vec::with_capacity(minutes),
        p_curt: Vec::with_capacity(minutes),
        p_export: Vec::with_capacity(minutes),
        p_self: Vec::with_capacity(minutes),
        q: Vec::with_capacity(minutes),
        losses_kw: Vec::with_capacity(minutes),
        slack_kva: Vec::with_capacity(minutes),
        events: Vec::new(),
        solver: Vec::new(),
        inverter_nodes,
    };

    let inverter_voltage = |sol: &VoltageSolution<T>| -> Vec<T> {
        pv_customers
            .iter()
            .map(|&c| {
                let cu = net.customers()[c];
                sol.magnitude_volts(cu.bus, cu.phase)
            })
            .collect()
    };
    let solve_at = |t: usize, net_kva: &[Complex<T>]| -> Result<VoltageSolution<T>, SimError> {
        pf.solve(&split.injections(net_kva), settings.power_flow)
            .map_err(|source| SimError::Step { t, source })
    };

    for t in 0..minutes {
        let demand: Vec<Complex<T>> = (0..nc)
            .map(|c| {
                let p = profiles.demand_of(c, t);
                Complex::new(T::lit(p), T::lit(p * settings.reactive_ratio))
            })
            .collect();
        let p_av: Vec<T> = pv_customers
            .iter()
            .map(|&c| T::lit(profiles.pv_of(c, t)).min(rating))
            .collect();
        for (st, &p) in fleet.iter_mut().zip(&p_av) {
            st.available = p;
        }
        let base_kva: Vec<Complex<T>> = demand.iter().map(|d| -*d).collect();
        let with_inverters = |p: &[T], q: &[T]| -> Vec<Complex<T>> {
            let mut s = base_kva.clone();
            for (i, &c) in pv_customers.iter().enumerate() {
                s[c] += Complex::new(p[i], q[i]);
            }
            s
        };

        let (p_out, q_out, sol, model_v) = match mode {
            ControlMode::Legacy => {
                let p: Vec<T> = fleet
                    .iter()
                    .zip(&v_prev)
                    .map(|(st, &v)| legacy_power(st, v, &settings.droop))
                    .collect();
                let q = vec![T::zero(); ni];
                let sol = solve_at(t, &with_inverters(&p, &q))?;
                (p, q, sol, None)
            }
            ControlMode::Autonomous => {
                let setpoints = |v: &[T]| -> (Vec<T>, Vec<T>) {
                    fleet
                        .iter()
                        .zip(v)
                        .map(|(st, &vi)| injected_power(st, vi, &settings.droop))
                        .unzip()
                };
                let mut v = v_prev.clone();
                let (mut p, mut q) = setpoints(&v);
                let mut sol = solve_at(t, &with_inverters(&p, &q))?;
                if settings.settle_droop && ni > 0 {
                    let tol = T::lit(settings.settle_tol_v);
                    let mut beta = T::lit(0.5);
                    let mut last = T::infinity();
                    for _ in 0..settings.settle_max_iter {
                        let measured = inverter_voltage(&sol);
                        let resid = measured
                            .iter()
                            .zip(&v)
                            .map(|(&a, &b)| (a - b).abs())
                            .fold(T::zero(), T::max);
                        if resid <= tol {
                            break;
                        }
                        if resid > last {
                            beta = (beta * T::lit(0.5)).max(T::lit(0.02));
                        }
                        last = resid;
                        for (vi, &m) in v.iter_mut().zip(&measured) {
                            *vi += beta * (m - *vi);
                        }
                        (p, q) = setpoints(&v);
                        sol = solve_at(t, &with_inverters(&p, &q))?;
                    }
                }
                (p, q, sol, None)
            }
            ControlMode::Cic | ControlMode::CicFair => {
                let model = cic_model.as_ref().expect("coordinated model");
                let lp = point.as_ref().expect("linearization point");
                let inverters: Vec<CicInverter<T>> = pv_customers
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| CicInverter {
                        customer: c,
                        p_av: p_av[i],
                        rating,
                        q_min_pu: T::lit(settings.droop.q_min_pu),
                        v_max: v_max[i],
                    })
                    .collect();
                let problem = assemble(model, &inverters, &demand, &[], lp, &cic_settings)?;
                let sol_cic = solve_cic(&problem);
                match sol_cic.status {
                    SolveStatus::Infeasible => {
                        log::warn!("minute {t}: coordinated program infeasible, curtailing fully")
                    }
                    SolveStatus::MaxIter => log::warn!(
                        "minute {t}: solver stopped with KKT residual {:.3e}",
                        sol_cic.certificate.residual()
                    ),
                    SolveStatus::Optimal => {}
                }
                res.solver.push(SolverRecord {
                    t,
                    status: sol_cic.status,
                    iterations: sol_cic.iterations,
                    kkt_residual: sol_cic.certificate.residual(),
                    objective: sol_cic.objective.as_f64(),
                    n_vars: problem.n_vars(),
                });
                let p: Vec<T> = p_av
                    .iter()
                    .zip(&sol_cic.p_curt)
                    .map(|(&a, &c)| (a - c).max(T::zero()))
                    .collect();
                let q = sol_cic.q.clone();
                let sol = solve_at(t, &with_inverters(&p, &q))?;
                let measured = model.measured(&sol, net);
                point = Some(update_vnom(lp, &measured, &sol_cic.v_model));
                (p, q, sol, Some(sol_cic.v_model))
            }
        };

        let v_inv = inverter_voltage(&sol);
        match mode {
            ControlMode::Legacy | ControlMode::Autonomous => {
                let events = update_trip_state(&mut fleet, &v_inv, kind, &settings.droop, &mut rng);
                res.events.extend(events.into_iter().map(|e| EventRecord {
                    t,
                    inverter: e.inverter,
                    event: e.kind,
                }));
            }
            ControlMode::Cic | ControlMode::CicFair => {
                for (vm, &v) in v_max.iter_mut().zip(&v_inv) {
                    *vm = update_vmax(*vm, v, v_trip);
                }
            }
        }
        v_prev = v_inv.clone();

        let v_or: Vec<f64> = nodes
            .iter()
            .map(|&(b, p)| sol.magnitude_volts(b, p).as_f64())
            .collect();
        if let (Some(rows), Some(vm), Some(model)) =
            (res.v_model.as_mut(), model_v.as_ref(), cic_model.as_ref())
        {
            let sens = model.sensitivities();
            rows.push(
                nodes
                    .iter()
                    .map(|&(b, p)| {
                        let phase = if balanced { None } else { Some(p) };
                        match sens.index_of(b, phase) {
                            Some(k) => vm[k].norm().as_f64() * vb,
                            None => vb,
                        }
                    })
                    .collect(),
            );
        }
        res.v_oracle.push(v_or);
        res.v_inverter
            .push(v_inv.iter().map(|v| v.as_f64()).collect());

        let mut row_av = Vec::with_capacity(ni);
        let mut row_out = Vec::with_capacity(ni);
        let mut row_curt = Vec::with_capacity(ni);
        let mut row_exp = Vec::with_capacity(ni);
        let mut row_self = Vec::with_capacity(ni);
        for (i, &c) in pv_customers.iter().enumerate() {
            let av = p_av[i].as_f64();
            let out = p_out[i].as_f64().min(av).max(0.0);
            let own = out.min(demand[c].re.as_f64());
            row_av.push(av);
            row_out.push(out);
            row_curt.push(av - out);
            row_self.push(own);
            row_exp.push(out - own);
        }
        res.p_av.push(row_av);
        res.p_output.push(row_out);
        res.p_curt.push(row_curt);
        res.p_export.push(row_exp);
        res.p_self.push(row_self);
        res.q.push(q_out.iter().map(|v| v.as_f64()).collect());
        res.losses_kw.push(pf.line_losses(&sol).as_f64());
        res.slack_kva.push(pf.slack_power(&sol).norm().as_f64());
    }
    Ok(res)
}

/// Loss energy (kWh) of the day with loads only.
pub fn baseline_losses_kwh<T: Real>(
    net: &Network<T>,
    profiles: &Profiles,
    settings: &SimSettings,
) -> Result<f64, SimError> {
    let mut s = *settings;
    s.mode = ControlMode::Legacy;
    Ok(run_day(net, &[], profiles, &s)?.losses_kwh())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::generate_feeder;

    fn setup() -> (Network<f64>, Profiles) {
        let net = generate_feeder(12, 0.04, "ow95", 1, 2).unwrap();
        let mut p = synthetic_profiles(30, 3);
        for s in p.demand.iter_mut().chain(p.pv.iter_mut()) {
            s.truncate(60);
        }
        (net, p)
    }

    #[test]
    fn zero_pv_all_modes_agree() {
        let (net, p) = setup();
        let p = p.without_pv();
        let pv: Vec<usize> = (0..net.customers().len()).collect();
        let mut out = Vec::new();
        for mode in ControlMode::ALL {
            let s = SimSettings {
                mode,
                ..SimSettings::default()
            };
            let r = run_day(&net, &pv, &p, &s).unwrap();
            assert_eq!(r.curtailed_kwh(), 0.0);
            assert!(r.events.is_empty());
            out.push(r.v_oracle);
        }
        assert!(out.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn bookkeeping_identity() {
        let (net, p) = setup();
        let pv: Vec<usize> = (0..net.customers().len()).step_by(2).collect();
        for mode in ControlMode::ALL {
            let s = SimSettings {
                mode,
                ..SimSettings::default()
            };
            let r = run_day(&net, &pv, &p, &s).unwrap();
            for t in 0..r.minutes() {
                for i in 0..pv.len() {
                    let lhs = r.p_av[t][i];
                    let rhs = r.p_export[t][i] + r.p_self[t][i] + r.p_curt[t][i];
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_result() {
        let (net, p) = setup();
        let pv: Vec<usize> = (0..net.customers().len()).collect();
        let s = SimSettings {
            mode: ControlMode::Autonomous,
            ..SimSettings::default()
        };
        assert_eq!(
            run_day(&net, &pv, &p, &s).unwrap(),
            run_day(&net, &pv, &p, &s).unwrap()
        );
    }

    #[test]
    fn rejects_bad_scenario() {
        let (net, p) = setup();
        assert!(run_day(&net, &[0, 0], &p, &SimSettings::default()).is_err());
        assert!(run_day(&net, &[99], &p, &SimSettings::default()).is_err());
    }
}
