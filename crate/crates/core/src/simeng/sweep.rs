//! Parallel sweeps over control modes, penetration levels and placements.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{hosting_capacity, relative_error_sigma, transformer_peak, utilized_power};
use super::scenarios::{generate_scenarios, Placement, Scenario};
use super::{
    baseline_losses_kwh, run_day, ControlMode, DayResult, Profiles, SimError, SimSettings,
};
use crate::cicopt::{ModelMode, SolveStatus};
use crate::controllers::TripEventKind;
use crate::netmodel::Network;
use crate::scalar::Real;
use crate::simeng::metrics::{HostingCapacity, SigmaReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventCounts {
    pub trip_avg: usize,
    pub trip_instant: usize,
    pub reconnect: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolverStats {
    pub optimal: usize,
    pub infeasible: usize,
    pub max_iter: usize,
    pub max_kkt_residual: f64,
    pub total_iterations: usize,
}

/// Scalar outcome of one simulated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: ControlMode,
    pub model: ModelMode,
    pub penetration: Option<f64>,
    pub scenario_id: Option<usize>,
    pub placement: Option<Placement>,
    pub pv_count: usize,
    pub minutes: usize,
    pub available_kwh: f64,
    pub curtailed_kwh: f64,
    pub losses_kwh: f64,
    pub baseline_losses_kwh: f64,
    pub loss_delta_kwh: f64,
    pub utilized_kwh: f64,
    pub utilized_percent: f64,
    pub curtails: bool,
    pub transformer_peak_kva: f64,
    pub max_oracle_voltage: f64,
    /// Longest run of consecutive minutes an inverter spends above `V_trip`.
    pub longest_run_above_trip: usize,
    pub events: EventCounts,
    pub solver: Option<SolverStats>,
    pub sigma: Option<SigmaReport>,
}

impl RunSummary {
    pub fn from_day(
        r: &DayResult,
        baseline_losses_kwh: f64,
        settings: &SimSettings,
        scenario: Option<&Scenario>,
    ) -> Result<Self, SimError> {
        let u = utilized_power(r, baseline_losses_kwh);
        let solver = if r.mode.is_coordinated() {
            let mut s = SolverStats::default();
            for rec in &r.solver {
                match rec.status {
                    SolveStatus::Optimal => s.optimal += 1,
                    SolveStatus::Infeasible => s.infeasible += 1,
                    SolveStatus::MaxIter => s.max_iter += 1,
                }
                if rec.status != SolveStatus::Infeasible {
                    s.max_kkt_residual = s.max_kkt_residual.max(rec.kkt_residual);
                }
                s.total_iterations += rec.iterations;
            }
            Some(s)
        } else {
            None
        };
        let sigma = match &r.v_model {
            Some(m) => Some(relative_error_sigma(m, &r.v_oracle)?),
            None => None,
        };
        Ok(Self {
            mode: r.mode,
            model: r.model,
            penetration: scenario.map(|s| s.penetration),
            scenario_id: scenario.map(|s| s.id),
            placement: scenario.map(|s| s.placement),
            pv_count: r.pv_customers.len(),
            minutes: r.minutes(),
            available_kwh: u.available_kwh,
            curtailed_kwh: u.curtailed_kwh,
            losses_kwh: r.losses_kwh(),
            baseline_losses_kwh,
            loss_delta_kwh: u.loss_delta_kwh,
            utilized_kwh: u.utilized_kwh,
            utilized_percent: u.percent,
            curtails: r.curtails(settings.curtailment_threshold_kw),
            transformer_peak_kva: transformer_peak(r),
            max_oracle_voltage: r.v_inverter.iter().flatten().copied().fold(0.0, f64::max),
            longest_run_above_trip: r.longest_run_above(settings.droop.v_trip),
            events: EventCounts {
                trip_avg: r.event_count(TripEventKind::TripAvg),
                trip_instant: r.event_count(TripEventKind::TripInstant),
                reconnect: r.event_count(TripEventKind::Reconnect),
            },
            solver,
            sigma,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub modes: Vec<ControlMode>,
    pub penetrations: Vec<f64>,
    /// Random placements per level in addition to the two clusters.
    pub n_random: usize,
    pub scenario_seed: u64,
    pub settings: SimSettings,
}

impl SweepSpec {
    /// 10 % to 100 % in steps of 10 %.
    pub fn default_grid() -> Vec<f64> {
        (1..=10).map(|i| i as f64 / 10.0).collect()
    }
}

pub type SweepRow = RunSummary;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeHosting {
    pub mode: ControlMode,
    #[serde(flatten)]
    pub capacity: HostingCapacity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub baseline_losses_kwh: f64,
    pub rows: Vec<SweepRow>,
    pub hosting: Vec<ModeHosting>,
}

/// Mixes run coordinates into a per-run seed.
pub fn run_seed(seed: u64, level: usize, scenario: usize) -> u64 {
    let mut z = seed
        .wrapping_add((level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((scenario as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every (mode, level, scenario) combination in parallel; rows are
/// ordered by mode, then level, then scenario id.
pub fn run_sweep<T: Real>(
    net: &Network<T>,
    profiles: &Profiles,
    spec: &SweepSpec,
) -> Result<SweepResult, SimError> {
    spec.settings.validate()?;
    if spec.modes.is_empty() || spec.penetrations.is_empty() {
        return Err(SimError::Settings(
            "sweep needs at least one mode and level".into(),
        ));
    }
    let baseline = baseline_losses_kwh(net, profiles, &spec.settings)?;
    let mut levels = Vec::new();
    for (li, &p) in spec.penetrations.iter().enumerate() {
        levels.push((
            li,
            generate_scenarios(net, p, spec.n_random, spec.scenario_seed)?,
        ));
    }
    let mut jobs = Vec::new();
    for &mode in &spec.modes {
        for (li, scenarios) in &levels {
            for sc in scenarios {
                jobs.push((mode, *li, sc));
            }
        }
    }
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(mode, li, sc)| {
            let mut s = spec.settings;
            s.mode = mode;
            s.seed = run_seed(spec.settings.seed, li, sc.id);
            let day = run_day(net, &sc.pv_customers, profiles, &s)?;
            RunSummary::from_day(&day, baseline, &s, Some(sc))
        })
        .collect::<Result<_, _>>()?;

    let mut hosting = Vec::new();
    for &mode in &spec.modes {
        let table: Vec<(f64, Vec<bool>)> = spec
            .penetrations
            .iter()
            .map(|&p| {
                let flags = rows
                    .iter()
                    .filter(|r| r.mode == mode && r.penetration == Some(p))
                    .map(|r| r.curtails)
                    .collect();
                (p, flags)
            })
            .collect();
        hosting.push(ModeHosting {
            mode,
            capacity: hosting_capacity(&table)?,
        });
    }
    Ok(SweepResult {
        baseline_losses_kwh: baseline,
        rows,
        hosting,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl SweepResult {
    /// One row per run.
    pub fn write_runs_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let io = |e: csv::Error| SimError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "mode",
            "penetration",
            "scenario",
            "placement",
            "pv_count",
            "available_kwh",
            "curtailed_kwh",
            "losses_kwh",
            "utilized_kwh",
            "utilized_percent",
            "curtails",
            "transformer_peak_kva",
            "max_voltage",
            "longest_run_above_trip",
            "trip_avg",
            "trip_instant",
            "reconnect",
            "sigma",
        ])
        .map_err(io)?;
        for r in &self.rows {
            let placement = r.placement.map(|p| {
                serde_json::to_value(p)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default()
            });
            w.write_record([
                r.mode.to_string(),
                opt(r.penetration),
                opt(r.scenario_id),
                opt(placement),
                r.pv_count.to_string(),
                format!("{:.6}", r.available_kwh),
                format!("{:.6}", r.curtailed_kwh),
                format!("{:.6}", r.losses_kwh),
                format!("{:.6}", r.utilized_kwh),
                format!("{:.6}", r.utilized_percent),
                r.curtails.to_string(),
                format!("{:.6}", r.transformer_peak_kva),
                format!("{:.6}", r.max_oracle_voltage),
                r.longest_run_above_trip.to_string(),
                r.events.trip_avg.to_string(),
                r.events.trip_instant.to_string(),
                r.events.reconnect.to_string(),
                opt(r.sigma.map(|s| format!("{:.6e}", s.sigma))),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))
    }

    /// Per (level, scenario): curtailment, losses and utilized share of each
    /// mode, plus differences relative to the first mode.
    pub fn write_comparison_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let io = |e: csv::Error| SimError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut modes: Vec<ControlMode> = Vec::new();
        for r in &self.rows {
            if !modes.contains(&r.mode) {
                modes.push(r.mode);
            }
        }
        let mut header = vec!["penetration".to_string(), "scenario".to_string()];
        for m in &modes {
            for col in ["curtailed_kwh", "losses_kwh", "utilized_percent"] {
                header.push(format!("{m}_{col}"));
            }
        }
        for m in modes.iter().skip(1) {
            header.push(format!("{m}_minus_{}_curtailed_kwh", modes[0]));
            header.push(format!("{m}_minus_{}_losses_kwh", modes[0]));
        }
        w.write_record(&header).map_err(io)?;
        let keys: Vec<(Option<f64>, Option<usize>)> = self
            .rows
            .iter()
            .filter(|r| r.mode == modes[0])
            .map(|r| (r.penetration, r.scenario_id))
            .collect();
        for (pen, sc) in keys {
            let find = |m: ControlMode| {
                self.rows
                    .iter()
                    .find(|r| r.mode == m && r.penetration == pen && r.scenario_id == sc)
            };
            let mut rec = vec![opt(pen), opt(sc)];
            for &m in &modes {
                match find(m) {
                    Some(r) => {
                        rec.push(format!("{:.6}", r.curtailed_kwh));
                        rec.push(format!("{:.6}", r.losses_kwh));
                        rec.push(format!("{:.6}", r.utilized_percent));
                    }
                    None => rec.extend([String::new(), String::new(), String::new()]),
                }
            }
            let first = find(modes[0]);
            for &m in modes.iter().skip(1) {
                match (find(m), first) {
                    (Some(a), Some(b)) => {
                        rec.push(format!("{:.6}", a.curtailed_kwh - b.curtailed_kwh));
                        rec.push(format!("{:.6}", a.losses_kwh - b.losses_kwh));
                    }
                    _ => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| SimError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_coordinates() {
        let a = run_seed(1, 0, 0);
        assert_ne!(a, run_seed(1, 1, 0));
        assert_ne!(a, run_seed(1, 0, 1));
        assert_eq!(a, run_seed(1, 0, 0));
    }

    #[test]
    fn default_grid_has_ten_levels() {
        let g = SweepSpec::default_grid();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[9], 1.0);
    }
}
