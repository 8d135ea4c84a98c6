//! Demand and PV availability profiles: spline interpolation, CSV ingestion
//! and a synthetic generator.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;

/// First simulated minute of the day (08:00).
pub const HORIZON_START: u32 = 8 * 60;
/// Number of one-minute intervals (08:00 to 19:30).
pub const HORIZON_MINUTES: usize = 690;
/// Number of household profiles in a generated set.
pub const DEFAULT_HOUSEHOLDS: usize = 30;

/// Natural cubic spline through `(x, y)` evaluated at `at`.
///
/// Requires strictly increasing `x` and at least two knots. Values at knot
/// abscissae are returned exactly.
pub fn natural_cubic_spline(x: &[f64], y: &[f64], at: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert_eq!(n, y.len(), "knot lengths differ");
    assert!(n >= 2, "at least two knots");
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    // Second derivatives via the tridiagonal system (Thomas algorithm).
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h[i + 1] - (y[i + 1] - y[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
        }
    }
    at.iter()
        .map(|&t| {
            let i = match x.binary_search_by(|v| v.partial_cmp(&t).expect("finite knots")) {
                Ok(i) => return y[i],
                Err(0) => 0,
                Err(i) if i >= n => n - 2,
                Err(i) => i - 1,
            };
            let (a, b) = (x[i + 1] - t, t - x[i]);
            let hi = h[i];
            m[i] * a.powi(3) / (6.0 * hi)
                + m[i + 1] * b.powi(3) / (6.0 * hi)
                + (y[i] / hi - m[i] * hi / 6.0) * a
                + (y[i + 1] / hi - m[i + 1] * hi / 6.0) * b
        })
        .collect()
}

fn linear(x: &[f64], y: &[f64], at: &[f64]) -> Vec<f64> {
    at.iter()
        .map(|&t| {
            if x.len() == 1 {
                return y[0];
            }
            let i = x.partition_point(|&v| v <= t).clamp(1, x.len() - 1);
            let (x0, x1) = (x[i - 1], x[i]);
            y[i - 1] + (y[i] - y[i - 1]) * (t - x0) / (x1 - x0)
        })
        .collect()
}

/// Interpolates a half-hourly series (first knot at minute 0) to one-minute
/// resolution over `(knots − 1)·30 + 1` minutes. Negative values are
/// clamped to zero; fewer than four knots fall back to linear interpolation.
pub fn interpolate_profile(halfhourly: &[f64]) -> Result<Vec<f64>, SimError> {
    if halfhourly.is_empty() {
        return Err(SimError::Profile("empty profile".into()));
    }
    if halfhourly.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Profile("non-finite profile value".into()));
    }
    let x: Vec<f64> = (0..halfhourly.len()).map(|i| i as f64 * 30.0).collect();
    let at: Vec<f64> = (0..=(halfhourly.len() - 1) * 30)
        .map(|m| m as f64)
        .collect();
    let out = if halfhourly.len() < 4 {
        log::warn!(
            "profile has {} knots; using linear interpolation",
            halfhourly.len()
        );
        linear(&x, halfhourly, &at)
    } else {
        natural_cubic_spline(&x, halfhourly, &at)
    };
    Ok(out.into_iter().map(|v| v.max(0.0)).collect())
}

/// Per-household one-minute series over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    /// Active demand, kW, `[household][minute]`.
    pub demand: Vec<Vec<f64>>,
    /// Available PV power at the inverter AC side, kW.
    pub pv: Vec<Vec<f64>>,
}

impl Profiles {
    pub fn minutes(&self) -> usize {
        self.demand.first().map_or(0, Vec::len)
    }

    pub fn households(&self) -> usize {
        self.demand.len()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.demand.is_empty() || self.pv.is_empty() {
            return Err(SimError::Profile("no household profiles".into()));
        }
        let t = self.minutes();
        if t == 0 {
            return Err(SimError::Profile("profiles have no samples".into()));
        }
        for series in self.demand.iter().chain(&self.pv) {
            if series.len() != t {
                return Err(SimError::Profile("profile lengths differ".into()));
            }
            if series.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(SimError::Profile(
                    "profile values must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// Demand of customer `c` at minute `t` (profile `c mod households`).
    pub fn demand_of(&self, customer: usize, t: usize) -> f64 {
        self.demand[customer % self.demand.len()][t]
    }

    pub fn pv_of(&self, customer: usize, t: usize) -> f64 {
        self.pv[customer % self.pv.len()][t]
    }

    /// Same profiles with all PV availability set to zero.
    pub fn without_pv(&self) -> Self {
        Self {
            demand: self.demand.clone(),
            pv: self.pv.iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }
}

fn knot_times() -> Vec<f64> {
    let knots = HORIZON_MINUTES / 30 + 1;
    (0..knots)
        .map(|i| (HORIZON_START as usize + i * 30) as f64 / 60.0)
        .collect()
}

/// Half-hourly synthetic knots: a two-peak demand shape and a clear-sky
/// PV bump peaking at 5 kW, with per-household random scaling.
pub fn synthetic_knots(households: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hours = knot_times();
    let mut demand = Vec::with_capacity(households);
    let mut pv = Vec::with_capacity(households);
    for _ in 0..households {
        let scale: f64 = rng.gen_range(0.6..1.4);
        let morning: f64 = rng.gen_range(7.5..9.0);
        let evening: f64 = rng.gen_range(17.5..19.5);
        let d: Vec<f64> = hours
            .iter()
            .map(|&h| {
                let bump = |c: f64, w: f64, a: f64| a * (-((h - c) / w).powi(2)).exp();
                let base = 0.45 + bump(morning, 1.2, 0.9) + bump(evening, 1.5, 1.4);
                let noise: f64 = rng.gen_range(0.85..1.15);
                (scale * base * noise).max(0.05)
            })
            .collect();
        demand.push(d);
        let peak: f64 = 5.0 * rng.gen_range(0.92..1.0);
        let (rise, set) = (6.0, 18.5);
        let p: Vec<f64> = hours
            .iter()
            .map(|&h| {
                if h <= rise || h >= set {
                    0.0
                } else {
                    peak * (std::f64::consts::PI * (h - rise) / (set - rise))
                        .sin()
                        .powf(1.3)
                }
            })
            .collect();
        pv.push(p);
    }
    (demand, pv)
}

/// Synthetic one-minute profiles over the horizon.
pub fn synthetic_profiles(households: usize, seed: u64) -> Profiles {
    let (d, p) = synthetic_knots(households, seed);
    let expand = |k: &Vec<f64>| {
        let mut s = interpolate_profile(k).expect("generated knots are valid");
        s.truncate(HORIZON_MINUTES);
        s
    };
    Profiles {
        demand: d.iter().map(expand).collect(),
        pv: p.iter().map(expand).collect(),
    }
}

/// Parses `HH:MM`, `HH:MM:SS`, or a date-time whose time part follows a
/// space or `T`. Returns minutes after midnight.
pub fn parse_timestamp(s: &str) -> Option<u32> {
    let time = s.trim().rsplit([' ', 'T']).next()?;
    let mut parts = time.split(':');
    let h: u32 = parts.next()?.trim().parse().ok()?;
    let m: u32 = parts.next()?.trim().parse().ok()?;
    if let Some(sec) = parts.next() {
        let sec: f64 = sec.trim().parse().ok()?;
        if sec != 0.0 {
            return None;
        }
    }
    if h > 24 || m > 59 {
        return None;
    }
    Some(h * 60 + m)
}

/// Reads `timestamp,customer_id,p_kw` rows at 30-minute or 1-minute
/// resolution and returns one horizon series per customer id, ordered by id.
pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>, SimError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| SimError::Profile(e.to_string()))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| SimError::Profile(format!("missing column `{name}`")))
    };
    let (ct, cc, cp) = (col("timestamp")?, col("customer_id")?, col("p_kw")?);
    let mut by_customer: BTreeMap<u64, BTreeMap<u32, f64>> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SimError::Profile(e.to_string()))?;
        let row = line + 2;
        let t = parse_timestamp(&rec[ct])
            .ok_or_else(|| SimError::Profile(format!("row {row}: bad timestamp `{}`", &rec[ct])))?;
        let c: u64 = rec[cc]
            .parse()
            .map_err(|_| SimError::Profile(format!("row {row}: bad customer_id")))?;
        let p: f64 = rec[cp]
            .parse()
            .map_err(|_| SimError::Profile(format!("row {row}: bad p_kw")))?;
        if !p.is_finite() || p < 0.0 {
            return Err(SimError::Profile(format!(
                "row {row}: p_kw must be non-negative"
            )));
        }
        if by_customer.entry(c).or_default().insert(t, p).is_some() {
            return Err(SimError::Profile(format!("row {row}: duplicate timestamp")));
        }
    }
    if by_customer.is_empty() {
        return Err(SimError::Profile("no profile rows".into()));
    }
    let end = HORIZON_START + HORIZON_MINUTES as u32;
    by_customer
        .into_iter()
        .map(|(c, series)| {
            let times: Vec<u32> = series.keys().copied().collect();
            let step = times.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(30);
            let (first, last) = (times[0], *times.last().unwrap());
            let covers = |need_last: u32| first <= HORIZON_START && last >= need_last;
            match step {
                1 => {
                    if !covers(end - 1) {
                        return Err(SimError::Profile(format!(
                            "customer {c}: series does not cover 08:00-19:30"
                        )));
                    }
                    (HORIZON_START..end)
                        .map(|m| {
                            series.get(&m).copied().ok_or_else(|| {
                                SimError::Profile(format!("customer {c}: gap at minute {m}"))
                            })
                        })
                        .collect()
                }
                30 => {
                    if !covers(end) || !(HORIZON_START - first).is_multiple_of(30) {
                        return Err(SimError::Profile(format!(
                            "customer {c}: series does not cover 08:00-19:30 on the half hour"
                        )));
                    }
                    let knots: Vec<f64> =
                        series.range(HORIZON_START..=end).map(|(_, &v)| v).collect();
                    if knots.len() != HORIZON_MINUTES / 30 + 1 {
                        return Err(SimError::Profile(format!(
                            "customer {c}: missing half-hour"
                        )));
                    }
                    let mut s = interpolate_profile(&knots)?;
                    s.truncate(HORIZON_MINUTES);
                    Ok(s)
                }
                other => Err(SimError::Profile(format!(
                    "customer {c}: unsupported resolution of {other} minutes"
                ))),
            }
        })
        .collect()
}

pub fn load_series_csv(path: &Path) -> Result<Vec<Vec<f64>>, SimError> {
    let f = std::fs::File::open(path)
        .map_err(|e| SimError::Profile(format!("{}: {e}", path.display())))?;
    read_series_csv(f)
}

fn fmt_time(minute: usize) -> String {
    format!("{:02}:{:02}", minute / 60, minute % 60)
}

/// Writes half-hourly knots in the ingestion format.
pub fn write_knots_csv<W: Write>(knots: &[Vec<f64>], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| SimError::Io(e.to_string());
    w.write_record(["timestamp", "customer_id", "p_kw"])
        .map_err(io)?;
    for (c, series) in knots.iter().enumerate() {
        for (i, v) in series.iter().enumerate() {
            let minute = HORIZON_START as usize + i * 30;
            w.write_record([fmt_time(minute), c.to_string(), format!("{v:.6}")])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| SimError::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_is_constant() {
        let s = interpolate_profile(&[1.5; 6]).unwrap();
        assert_eq!(s.len(), 151);
        assert!(s.iter().all(|v| (v - 1.5).abs() < 1e-12));
    }

    #[test]
    fn knots_are_preserved() {
        let k = [0.2, 1.0, 3.5, 2.0, 0.4, 0.9];
        let s = interpolate_profile(&k).unwrap();
        for (i, v) in k.iter().enumerate() {
            assert_eq!(s[i * 30], *v);
        }
    }

    #[test]
    fn negatives_are_clamped() {
        let s = interpolate_profile(&[0.0, 0.0, 5.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(s.iter().all(|&v| v >= 0.0));
        assert!(s.contains(&0.0));
    }

    #[test]
    fn short_series_is_linear() {
        let s = interpolate_profile(&[0.0, 3.0]).unwrap();
        assert_eq!(s.len(), 31);
        assert!((s[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("08:30"), Some(510));
        assert_eq!(parse_timestamp("2013-01-10 19:30:00"), Some(1170));
        assert_eq!(parse_timestamp("2013-01-10T08:00"), Some(480));
        assert_eq!(parse_timestamp("8h30"), None);
    }

    #[test]
    fn csv_round_trip_of_knots() {
        let (d, _) = synthetic_knots(3, 7);
        let mut buf = Vec::new();
        write_knots_csv(&d, &mut buf).unwrap();
        let series = read_series_csv(buf.as_slice()).unwrap();
        assert_eq!(series.len(), 3);
        for (s, k) in series.iter().zip(&d) {
            assert_eq!(s.len(), HORIZON_MINUTES);
            assert!((s[0] - k[0]).abs() < 1e-6);
            assert!((s[30] - k[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn csv_rejects_short_coverage() {
        let data = "timestamp,customer_id,p_kw\n08:00,0,1\n08:30,0,1\n09:00,0,1\n09:30,0,1\n";
        assert!(read_series_csv(data.as_bytes()).is_err());
    }

    #[test]
    fn synthetic_mean_demand() {
        let p = synthetic_profiles(DEFAULT_HOUSEHOLDS, 1);
        p.validate().unwrap();
        let total: f64 = p.demand.iter().flatten().sum();
        let mean = total / (p.households() * p.minutes()) as f64;
        assert!((mean - 0.77).abs() < 0.1, "{mean}");
        let peak = p.pv.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        assert!(peak <= 5.0 && peak > 4.5);
    }
}
