//! PV placement scenarios.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::netmodel::Network;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    ClusterNear,
    ClusterFar,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: usize,
    pub penetration: f64,
    pub placement: Placement,
    /// Customer positions owning PV, ascending.
    pub pv_customers: Vec<usize>,
}

/// Number of PV customers for a penetration level.
pub fn pv_count(penetration: f64, customers: usize) -> Result<usize, SimError> {
    if !(penetration > 0.0 && penetration <= 1.0) {
        return Err(SimError::Scenario(format!(
            "penetration {penetration} outside (0, 1]"
        )));
    }
    let k = (penetration * customers as f64).round() as usize;
    if k == 0 {
        return Err(SimError::Scenario(format!(
            "penetration {penetration} gives no PV customers out of {customers}"
        )));
    }
    Ok(k)
}

/// Customer positions ordered by effective impedance of their bus (ties by
/// position).
pub fn customers_by_impedance<T: Real>(net: &Network<T>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..net.customers().len()).collect();
    order.sort_by(|&a, &b| {
        let za = net.effective_impedance(net.customers()[a].bus);
        let zb = net.effective_impedance(net.customers()[b].bus);
        za.partial_cmp(&zb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Random customer order for random scenario `r`; the first `k` entries are
/// its PV set, so sets are nested across penetration levels.
pub fn random_order(customers: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64 + 1);
    let mut order: Vec<usize> = (0..customers).collect();
    order.shuffle(&mut rng);
    order
}

/// Near and far clusters followed by `n_random` seeded random placements.
pub fn generate_scenarios<T: Real>(
    net: &Network<T>,
    penetration: f64,
    n_random: usize,
    seed: u64,
) -> Result<Vec<Scenario>, SimError> {
    let n = net.customers().len();
    let k = pv_count(penetration, n)?;
    let by_z = customers_by_impedance(net);
    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    let mut out = vec![
        Scenario {
            id: 0,
            penetration,
            placement: Placement::ClusterNear,
            pv_customers: sorted(by_z[..k].to_vec()),
        },
        Scenario {
            id: 1,
            penetration,
            placement: Placement::ClusterFar,
            pv_customers: sorted(by_z[n - k..].to_vec()),
        },
    ];
    for r in 0..n_random {
        out.push(Scenario {
            id: r + 2,
            penetration,
            placement: Placement::Random,
            pv_customers: sorted(random_order(n, seed, r)[..k].to_vec()),
        });
    }
    Ok(out)
}
