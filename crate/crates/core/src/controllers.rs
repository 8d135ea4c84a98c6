//! Autonomous Volt/VAr + Volt/Watt droop inverters and legacy unity-pf
//! inverters, including the stochastic one-at-a-time trip/reconnect rules.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Droop and trip setpoints (volts, per-unit powers, intervals).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DroopSettings {
    pub v_min: f64,
    pub v_nom: f64,
    pub v_deadband: f64,
    pub v_qmin: f64,
    pub v_max_autonomous: f64,
    pub v_max_legacy: f64,
    pub v_trip: f64,
    /// Reactive limit, per unit of rating (absorption negative).
    pub q_min_pu: f64,
    pub p_pu_at_vmax: f64,
    /// Moving-average window for the average trip rule.
    pub trip_window: usize,
    /// Minimum off time before reconnection.
    pub reconnect_delay: usize,
}

impl Default for DroopSettings {
    fn default() -> Self {
        Self {
            v_min: 207.0,
            v_nom: 230.0,
            v_deadband: 248.0,
            v_qmin: 253.0,
            v_max_autonomous: 265.0,
            v_max_legacy: 260.0,
            v_trip: 257.0,
            q_min_pu: -0.44,
            p_pu_at_vmax: 0.2,
            trip_window: 10,
            reconnect_delay: 5,
        }
    }
}

impl DroopSettings {
    pub fn validate(&self) -> Result<(), String> {
        let ordered = self.v_min < self.v_nom
            && self.v_nom < self.v_deadband
            && self.v_deadband < self.v_qmin
            && self.v_qmin < self.v_trip
            && self.v_trip <= self.v_max_legacy
            && self.v_max_legacy < self.v_max_autonomous;
        if !ordered {
            return Err(
                "droop voltages must satisfy Vmin < Vnom < VDB < VQmin < Vtrip <= Vmax,l < Vmax,a"
                    .into(),
            );
        }
        if !(-1.0..=0.0).contains(&self.q_min_pu) {
            return Err("q_min_pu must lie in [-1, 0]".into());
        }
        if !(0.0..=1.0).contains(&self.p_pu_at_vmax) {
            return Err("p_pu_at_vmax must lie in [0, 1]".into());
        }
        if self.trip_window == 0 {
            return Err("trip_window must be at least one interval".into());
        }
        Ok(())
    }
}

/// Volt/VAr curve: zero up to the deadband, linear down to `q_min_pu` at
/// `v_qmin`, held there above. Zero at or below `v_min` (inverter cut off).
pub fn volt_var_q<T: Real>(v: T, s: &DroopSettings) -> T {
    let (vmin, vdb, vq, qmin) = (
        T::lit(s.v_min),
        T::lit(s.v_deadband),
        T::lit(s.v_qmin),
        T::lit(s.q_min_pu),
    );
    if v <= vmin || v <= vdb {
        T::zero()
    } else if v >= vq {
        qmin
    } else {
        qmin * (v - vdb) / (vq - vdb)
    }
}

/// Volt/Watt curve: 1 pu up to `v_qmin`, linear to `p_pu_at_vmax` at the
/// autonomous cut-off voltage, zero beyond it and at or below `v_min`.
pub fn volt_watt_p<T: Real>(v: T, s: &DroopSettings) -> T {
    let (vmin, vq, vmax, pmin) = (
        T::lit(s.v_min),
        T::lit(s.v_qmin),
        T::lit(s.v_max_autonomous),
        T::lit(s.p_pu_at_vmax),
    );
    if v <= vmin || v > vmax {
        T::zero()
    } else if v <= vq {
        T::one()
    } else {
        pmin + (T::one() - pmin) * (vmax - v) / (vmax - vq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverterKind {
    Autonomous,
    Legacy,
}

/// ON/OFF status and trip bookkeeping of one inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterState<T> {
    pub on: bool,
    pub voltage_history: VecDeque<T>,
    pub off_timer: usize,
    /// Rated apparent power, kVA.
    pub rating: T,
    /// Available AC-side PV power, kW.
    pub available: T,
}

impl<T: Real> InverterState<T> {
    pub fn new(rating: T) -> Self {
        Self {
            on: true,
            voltage_history: VecDeque::new(),
            off_timer: 0,
            rating,
            available: T::zero(),
        }
    }

    pub fn window_mean(&self) -> Option<T> {
        if self.voltage_history.is_empty() {
            return None;
        }
        let n = T::from_usize_lossy(self.voltage_history.len());
        Some(self.voltage_history.iter().copied().sum::<T>() / n)
    }

    fn disconnect(&mut self, delay: usize) {
        self.on = false;
        self.off_timer = delay;
        self.voltage_history.clear();
    }
}

/// `(P_inj kW, Q kVAr)` of an autonomous inverter in reactive-priority mode.
pub fn injected_power<T: Real>(st: &InverterState<T>, v: T, s: &DroopSettings) -> (T, T) {
    if !st.on {
        return (T::zero(), T::zero());
    }
    let q = volt_var_q(v, s) * st.rating;
    let head = st.rating * st.rating - q * q;
    assert!(head >= -T::epsilon(), "reactive setpoint exceeds rating");
    let p = head
        .max(T::zero())
        .sqrt()
        .min(st.available * volt_watt_p(v, s));
    (p, q)
}

/// Unity power factor output of a legacy inverter (zero when off or at or
/// below `v_min`).
pub fn legacy_power<T: Real>(st: &InverterState<T>, v: T, s: &DroopSettings) -> T {
    if st.on && v > T::lit(s.v_min) {
        st.available
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripEventKind {
    TripAvg,
    TripInstant,
    Reconnect,
}

impl TripEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TripEventKind::TripAvg => "trip_avg",
            TripEventKind::TripInstant => "trip_instant",
            TripEventKind::Reconnect => "reconnect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripEvent {
    pub inverter: usize,
    pub kind: TripEventKind,
}

/// Floor on the squared voltage distance used by the sampling weights.
pub const WEIGHT_FLOOR_V2: f64 = 1e-6;

/// Disconnection weight `(V_max − V)^-2`.
pub fn trip_weight(v: f64, v_max: f64) -> f64 {
    ((v_max - v).powi(2)).max(WEIGHT_FLOOR_V2).recip()
}

/// Reconnection weight `(V − V_nom)^-2`.
pub fn reconnect_weight(v: f64, v_nom: f64) -> f64 {
    ((v - v_nom).powi(2)).max(WEIGHT_FLOOR_V2).recip()
}

/// Draws one index with probability proportional to its weight.
pub fn weighted_pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Some(i);
        }
        u -= w;
    }
    Some(weights.len() - 1)
}

/// Advances the trip state of a fleet by one interval.
///
/// 1. Every ON inverter at or above `V_max` disconnects immediately.
/// 2. Of the remaining ON inverters whose window mean exceeds `V_trip`, at
///    most one disconnects, sampled with weight `(V_max − V)^-2`.
/// 3. Of the OFF inverters whose delay has elapsed and whose voltage is
///    below `V_trip`, at most one reconnects, weight `(V − V_nom)^-2`.
pub fn update_trip_state<T: Real, R: Rng + ?Sized>(
    fleet: &mut [InverterState<T>],
    measured: &[T],
    kind: InverterKind,
    s: &DroopSettings,
    rng: &mut R,
) -> Vec<TripEvent> {
    assert_eq!(fleet.len(), measured.len(), "one voltage per inverter");
    let v_max = match kind {
        InverterKind::Autonomous => s.v_max_autonomous,
        InverterKind::Legacy => s.v_max_legacy,
    };
    let mut events = Vec::new();

    // Reconnection candidates are judged on the state at the start of the step.
    let mut reconnect: Vec<usize> = Vec::new();
    for (i, st) in fleet.iter_mut().enumerate() {
        if st.on {
            st.voltage_history.push_back(measured[i]);
            while st.voltage_history.len() > s.trip_window {
                st.voltage_history.pop_front();
            }
        } else {
            st.off_timer = st.off_timer.saturating_sub(1);
            if st.off_timer == 0 && measured[i].as_f64() < s.v_trip {
                reconnect.push(i);
            }
        }
    }

    for (i, st) in fleet.iter_mut().enumerate() {
        if st.on && measured[i].as_f64() >= v_max {
            st.disconnect(s.reconnect_delay);
            events.push(TripEvent {
                inverter: i,
                kind: TripEventKind::TripInstant,
            });
        }
    }

    let eligible: Vec<usize> = fleet
        .iter()
        .enumerate()
        .filter(|(_, st)| st.on && st.window_mean().is_some_and(|m| m.as_f64() > s.v_trip))
        .map(|(i, _)| i)
        .collect();
    let weights: Vec<f64> = eligible
        .iter()
        .map(|&i| trip_weight(measured[i].as_f64(), v_max))
        .collect();
    if let Some(k) = weighted_pick(&weights, rng) {
        let i = eligible[k];
        fleet[i].disconnect(s.reconnect_delay);
        events.push(TripEvent {
            inverter: i,
            kind: TripEventKind::TripAvg,
        });
    }

    let weights: Vec<f64> = reconnect
        .iter()
        .map(|&i| reconnect_weight(measured[i].as_f64(), s.v_nom))
        .collect();
    if let Some(k) = weighted_pick(&weights, rng) {
        let i = reconnect[k];
        fleet[i].on = true;
        fleet[i].off_timer = 0;
        events.push(TripEvent {
            inverter: i,
            kind: TripEventKind::Reconnect,
        });
    }
    events
}
