//! Day and sweep metrics: utilized PV energy, hosting capacity, model error
//! and transformer loading.

use serde::{Deserialize, Serialize, Serializer};

use super::{DayResult, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Utilized {
    pub available_kwh: f64,
    pub curtailed_kwh: f64,
    /// Losses with PV minus losses without PV.
    pub loss_delta_kwh: f64,
    pub utilized_kwh: f64,
    pub percent: f64,
}

/// Available PV energy less curtailment and the PV-attributable change in
/// line losses. Reported as 100 % when no PV energy is available.
pub fn utilized_power(result: &DayResult, baseline_losses_kwh: f64) -> Utilized {
    utilized_from(
        result.available_kwh(),
        result.curtailed_kwh(),
        result.losses_kwh(),
        baseline_losses_kwh,
    )
}

pub fn utilized_from(available: f64, curtailed: f64, losses: f64, baseline: f64) -> Utilized {
    let delta = losses - baseline;
    let utilized = available - curtailed - delta;
    let percent = if available > 0.0 {
        100.0 * utilized / available
    } else {
        100.0
    };
    Utilized {
        available_kwh: available,
        curtailed_kwh: curtailed,
        loss_delta_kwh: delta,
        utilized_kwh: utilized,
        percent,
    }
}

pub const ABOVE_GRID_MAX: &str = "above grid max";

fn bound_or_sentinel<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(p) => s.serialize_f64(*p),
        None => s.serialize_str(ABOVE_GRID_MAX),
    }
}

/// Penetration bounds; `None` means the grid maximum was never reached and
/// serializes as the "above grid max" sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HostingCapacity {
    #[serde(serialize_with = "bound_or_sentinel")]
    pub cap_min: Option<f64>,
    #[serde(serialize_with = "bound_or_sentinel")]
    pub cap_max: Option<f64>,
}

impl HostingCapacity {
    pub fn label(v: Option<f64>) -> String {
        v.map_or(ABOVE_GRID_MAX.to_string(), |p| format!("{p}"))
    }
}

/// `(penetration, per-scenario curtailment flags)` rows, in any order.
///
/// `cap_min` is the lowest level where some scenario curtails; `cap_max` the
/// lowest level where every scenario does.
pub fn hosting_capacity(table: &[(f64, Vec<bool>)]) -> Result<HostingCapacity, SimError> {
    let mut rows: Vec<&(f64, Vec<bool>)> = table.iter().collect();
    if rows.iter().any(|(p, _)| !p.is_finite()) {
        return Err(SimError::Scenario("non-finite penetration".into()));
    }
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(SimError::Scenario("duplicate penetration level".into()));
    }
    let cap_min = rows.iter().find(|(_, f)| f.iter().any(|&x| x)).map(|r| r.0);
    let cap_max = rows
        .iter()
        .find(|(_, f)| !f.is_empty() && f.iter().all(|&x| x))
        .map(|r| r.0);
    Ok(HostingCapacity { cap_min, cap_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SigmaReport {
    /// `max |(V_oracle − V_model) / V_oracle|`
    pub sigma: f64,
    /// Largest `V_model − V_oracle` (0 if never positive).
    pub max_dev_pos: f64,
    /// Largest `V_oracle − V_model` (0 if never positive).
    pub max_dev_neg: f64,
}

/// Relative model error over equally shaped `[t][node]` magnitude tables.
pub fn relative_error_sigma(
    v_model: &[Vec<f64>],
    v_oracle: &[Vec<f64>],
) -> Result<SigmaReport, SimError> {
    if v_model.len() != v_oracle.len()
        || v_model
            .iter()
            .zip(v_oracle)
            .any(|(a, b)| a.len() != b.len())
    {
        return Err(SimError::Scenario("voltage tables differ in shape".into()));
    }
    let mut r = SigmaReport::default();
    for (m_row, o_row) in v_model.iter().zip(v_oracle) {
        for (&m, &o) in m_row.iter().zip(o_row) {
            if o == 0.0 {
                return Err(SimError::Scenario("zero oracle voltage".into()));
            }
            r.sigma = r.sigma.max(((o - m) / o).abs());
            r.max_dev_pos = r.max_dev_pos.max(m - o);
            r.max_dev_neg = r.max_dev_neg.max(o - m);
        }
    }
    Ok(r)
}

/// Largest slack apparent power over the day, kVA.
pub fn transformer_peak(result: &DayResult) -> f64 {
    result.slack_kva.iter().copied().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utilized_examples() {
        let u = utilized_from(50.0, 2.0, 11.0, 10.0);
        assert!((u.utilized_kwh - 47.0).abs() < 1e-12);
        assert!((u.percent - 94.0).abs() < 1e-12);
        assert_eq!(utilized_from(50.0, 0.0, 10.0, 10.0).percent, 100.0);
        assert!(utilized_from(50.0, 0.0, 9.0, 10.0).percent > 100.0);
        assert_eq!(utilized_from(0.0, 0.0, 9.0, 9.0).percent, 100.0);
    }

    #[test]
    fn hosting_examples() {
        let mut table = Vec::new();
        for i in 1..=10 {
            let p = i as f64 / 10.0;
            let curtailing = match i {
                1 | 2 => 0,
                3..=5 => 1,
                _ => 20,
            };
            table.push((p, (0..20).map(|s| s < curtailing).collect()));
        }
        let h = hosting_capacity(&table).unwrap();
        assert_eq!(h.cap_min, Some(0.3));
        assert_eq!(h.cap_max, Some(0.6));
        let none: Vec<(f64, Vec<bool>)> = (1..=10)
            .map(|i| (i as f64 / 10.0, vec![false; 3]))
            .collect();
        let h = hosting_capacity(&none).unwrap();
        assert_eq!(h.cap_min, None);
        assert_eq!(HostingCapacity::label(h.cap_max), ABOVE_GRID_MAX);
    }

    #[test]
    fn sigma_examples() {
        let a = vec![vec![1.0, 1.0]];
        assert_eq!(
            relative_error_sigma(&a, &a).unwrap(),
            SigmaReport::default()
        );
        let m = vec![vec![1.01, 1.01]];
        let r = relative_error_sigma(&m, &a).unwrap();
        assert!((r.sigma - 0.01).abs() < 1e-12);
        assert!((r.max_dev_pos - 0.01).abs() < 1e-12);
        assert_eq!(r.max_dev_neg, 0.0);
        assert!(relative_error_sigma(&m, &[vec![0.0, 1.0]]).is_err());
        assert!(relative_error_sigma(&m, &[vec![1.0]]).is_err());
    }
}
