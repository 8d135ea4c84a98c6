//! Synthetic radial feeders: a main spine with short single-bus laterals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BusSpec, LineSpec, Network, NetworkError, PhaseSet, DEFAULT_BASE_KVA};
use crate::scalar::Real;

/// Probability that a new bus hangs off the spine as a lateral.
const LATERAL_PROBABILITY: f64 = 0.25;

/// Builds a deterministic feeder of `n_buses` buses (slack included).
///
/// Every non-slack bus carries `customers_per_bus` customers, numbered in
/// bus order and spread round-robin over phases A, B, C.
pub fn generate_feeder<T: Real>(
    n_buses: usize,
    spacing_km: T,
    cable: &str,
    customers_per_bus: usize,
    seed: u64,
) -> Result<Network<T>, NetworkError> {
    if n_buses < 2 {
        return Err(NetworkError::TooFewBuses(n_buses));
    }
    if !(spacing_km > T::zero()) {
        return Err(NetworkError::InvalidParameter(
            "spacing must be positive".into(),
        ));
    }
    super::cable_lookup::<T>(cable)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buses = vec![BusSpec {
        id: 0,
        phases: PhaseSet::ABC,
        customers: vec![],
    }];
    let mut lines = Vec::with_capacity(n_buses - 1);
    let mut spine: Vec<u64> = vec![0];
    let mut next_customer = 0usize;
    for id in 1..n_buses as u64 {
        let lateral = spine.len() > 2 && rng.gen_bool(LATERAL_PROBABILITY);
        let (parent, length) = if lateral {
            let at = rng.gen_range(1..spine.len());
            let frac = rng.gen_range(0.5..1.0);
            (spine[at], spacing_km * T::lit(frac))
        } else {
            let tail = *spine.last().unwrap();
            spine.push(id);
            (tail, spacing_km)
        };
        let customers = (0..customers_per_bus)
            .map(|_| {
                next_customer += 1;
                (next_customer - 1, None)
            })
            .collect();
        buses.push(BusSpec {
            id,
            phases: PhaseSet::ABC,
            customers,
        });
        lines.push(LineSpec {
            from: parent,
            to: id,
            length_km: length,
            cable: cable.to_string(),
        });
    }
    Network::build(
        buses,
        lines,
        vec![],
        0,
        T::lit(400.0),
        T::lit(super::DEFAULT_BASE_VOLTAGE),
        T::lit(DEFAULT_BASE_KVA),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_feeder() {
        let n: Network<f64> = generate_feeder(2, 1.0, "ow95", 1, 0).unwrap();
        assert_eq!(n.n_buses(), 2);
        assert_eq!(n.lines().len(), 1);
        assert_eq!(n.lines()[0].length_km, 1.0);
        assert_eq!(n.customers().len(), 1);
    }

    #[test]
    fn rejects_single_bus() {
        assert!(matches!(
            generate_feeder::<f64>(1, 1.0, "ow95", 1, 0),
            Err(NetworkError::TooFewBuses(1))
        ));
    }

    #[test]
    fn deterministic_from_seed() {
        let a: Network<f64> = generate_feeder(40, 0.04, "ow95", 2, 11).unwrap();
        let b: Network<f64> = generate_feeder(40, 0.04, "ow95", 2, 11).unwrap();
        assert_eq!(a.to_file(), b.to_file());
        let c: Network<f64> = generate_feeder(40, 0.04, "ow95", 2, 12).unwrap();
        assert_ne!(a.to_file(), c.to_file());
    }

    #[test]
    fn round_robin_phases() {
        let n: Network<f64> = generate_feeder(5, 0.04, "ow95", 3, 1).unwrap();
        for c in n.customers() {
            assert_eq!(c.phase.index(), c.index % 3);
        }
    }
}
