use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use gridvolt::netmodel::{generate_feeder, load_network};
use gridvolt::{Complex, Network};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn semi_urban_fixture_counts_match_raw_file() {
    let path = fixture("feeder114.json");
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let buses = raw["buses"].as_array().unwrap();
    let lines = raw["lines"].as_array().unwrap();
    let customers = buses.iter().filter(|b| b.get("customer").is_some()).count();

    let net: Network = load_network(&path).unwrap();
    assert_eq!(net.n_buses(), buses.len());
    assert_eq!(net.lines().len(), lines.len());
    assert_eq!(net.n_buses(), 114);
    assert_eq!(net.lines().len(), 113);
    assert_eq!(net.customers().len(), customers);

    let ids: HashSet<u64> = buses.iter().map(|b| b["id"].as_u64().unwrap()).collect();
    let loaded: HashSet<u64> = net.buses().iter().map(|b| b.id).collect();
    assert_eq!(ids, loaded);
    assert_eq!(net.buses()[net.slack()].id, raw["slack"].as_u64().unwrap());
}

#[test]
fn semi_urban_fixture_phasing_follows_file() {
    let path = fixture("feeder114.json");
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let net: Network = load_network(&path).unwrap();
    for b in raw["buses"].as_array().unwrap() {
        let idx = net.bus_index(b["id"].as_u64().unwrap()).unwrap();
        let phases = b["phase"].as_str().unwrap();
        assert_eq!(
            net.buses()[idx].phases.len(),
            phases.len(),
            "bus {}",
            b["id"]
        );
    }
}

const OW95: (f64, f64) = (0.452, 0.270);

#[test]
fn generated_feeder_impedance_grows_away_from_slack() {
    let net: Network = generate_feeder(30, 0.04, "ow95", 1, 7).unwrap();
    assert_eq!(net.n_buses(), 30);
    assert_eq!(net.lines().len(), 29);

    let file = net.to_file();
    let mut cumulative: HashMap<u64, Complex<f64>> = HashMap::new();
    cumulative.insert(file.slack, Complex::new(0.0, 0.0));
    let mut pending = file.lines.clone();
    while !pending.is_empty() {
        let before = pending.len();
        pending.retain(|l| match cumulative.get(&l.from).copied() {
            Some(z) => {
                let seg = Complex::new(OW95.0, OW95.1) * l.length_km;
                cumulative.insert(l.to, z + seg);
                false
            }
            None => true,
        });
        assert!(pending.len() < before, "lines do not form a tree");
    }

    for l in &file.lines {
        let from = cumulative[&l.from].norm();
        let to = cumulative[&l.to].norm();
        assert!(to > from, "line {} -> {}", l.from, l.to);
    }
    for (b, bus) in net.buses().iter().enumerate() {
        let expect = cumulative[&bus.id].norm();
        assert!((net.effective_impedance(b) - expect).abs() < 1e-12);
    }
}
