//! Embedded LV conductor catalog (per-km phase impedances, Kron-reduced).

use serde::{Deserialize, Serialize};

use super::NetworkError;
use crate::scalar::{Complex, Real};

/// Per-km self and mutual impedance of a phase conductor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseImpedance<T> {
    pub label: String,
    /// Conductor cross-section in mm².
    pub cross_section: T,
    pub r_self: T,
    pub x_self: T,
    pub r_mutual: T,
    pub x_mutual: T,
}

/// `(label, mm², R_ii, X_ii, R_ij, X_ij)` in Ω/km.
pub const CABLE_TABLE: [(&str, f64, f64, f64, f64, f64); 5] = [
    ("ow50", 50.0, 0.699, 0.149, 0.049, 0.164),
    ("ug70", 70.0, 0.759, 0.243, 0.316, 0.193),
    ("ow95", 95.0, 0.452, 0.270, 0.049, 0.164),
    ("ug150", 150.0, 0.227, 0.078, 0.070, 0.078),
    ("ug240", 240.0, 0.072, 0.199, 0.021, 0.048),
];

pub fn catalog_names() -> Vec<String> {
    CABLE_TABLE.iter().map(|row| row.0.to_string()).collect()
}

/// Looks up a conductor in the embedded catalog.
pub fn cable_lookup<T: Real>(name: &str) -> Result<PhaseImpedance<T>, NetworkError> {
    CABLE_TABLE
        .iter()
        .find(|row| row.0 == name)
        .map(|&(label, area, r, x, rm, xm)| PhaseImpedance {
            label: label.to_string(),
            cross_section: T::lit(area),
            r_self: T::lit(r),
            x_self: T::lit(x),
            r_mutual: T::lit(rm),
            x_mutual: T::lit(xm),
        })
        .ok_or_else(|| NetworkError::UnknownCable {
            name: name.to_string(),
            valid: catalog_names(),
        })
}

impl<T: Real> PhaseImpedance<T> {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |reason: &str| {
            Err(NetworkError::InvalidCable {
                label: self.label.clone(),
                reason: reason.to_string(),
            })
        };
        let vals = [self.r_self, self.x_self, self.r_mutual, self.x_mutual];
        if vals.iter().any(|v| !v.is_finite()) {
            return bad("non-finite impedance");
        }
        if !(self.r_self > T::zero()) || !(self.r_mutual > T::zero()) {
            return bad("resistances must be positive");
        }
        if self.x_self < T::zero() || self.x_mutual < T::zero() {
            return bad("reactances must be non-negative");
        }
        if self.r_mutual > self.r_self {
            return bad("mutual resistance exceeds self resistance");
        }
        Ok(())
    }

    pub fn z_self(&self) -> Complex<T> {
        Complex::new(self.r_self, self.x_self)
    }

    pub fn z_mutual(&self) -> Complex<T> {
        Complex::new(self.r_mutual, self.x_mutual)
    }

    /// Per-km 3×3 phase impedance matrix.
    pub fn phase_matrix(&self) -> [[Complex<T>; 3]; 3] {
        let (s, m) = (self.z_self(), self.z_mutual());
        [[s, m, m], [m, s, m], [m, m, s]]
    }
}
