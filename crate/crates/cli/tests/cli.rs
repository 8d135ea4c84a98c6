use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gridvolt(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridvolt"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "feeder": {"buses": 8, "spacing_km": 0.12, "cable": "ow95"},
        "households": 7,
        "scenarios": 1,
        "scenario": 0
    });
    let path = dir.join("small.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn run_is_byte_identical_for_same_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    for out in ["a", "b"] {
        let o = gridvolt(
            &[
                "run",
                "--config",
                &cfg,
                "--mode",
                "autonomous",
                "--penetration",
                "0.9",
                "--seed",
                "5",
                "--out",
                out,
            ],
            tmp.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(tmp.path().join("a/summary.json")).unwrap();
    let b = std::fs::read(tmp.path().join("b/summary.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_network_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = gridvolt(&["run", "--network", "nope.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn bad_flags_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let typo = tmp.path().join("typo.json");
    std::fs::write(&typo, r#"{"settings": {"cic": {"loss_wieght": 0}}}"#).unwrap();
    let typo = typo.display().to_string();
    for args in [
        vec!["run", "--mode", "fuzzy"],
        vec!["run", "--config", &typo],
        vec!["run", "--config", &cfg, "--penetration", "1.5"],
        vec!["run", "--config", &cfg, "--cable", "copper"],
        vec!["sweep", "--config", "missing.json"],
        vec![
            "run",
            "--config",
            &cfg,
            "--penetration",
            "0.5",
            "--scenario",
            "9",
        ],
    ] {
        let o = gridvolt(&args, tmp.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn zero_penetration_uses_all_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = gridvolt(
        &["run", "--config", &cfg, "--penetration", "0", "--out", "z"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&tmp.path().join("z/summary.json"));
    assert_eq!(s["summary"]["utilized_percent"].as_f64(), Some(100.0));
    assert_eq!(s["summary"]["pv_count"].as_u64(), Some(0));
}

#[test]
fn run_outputs_have_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = gridvolt(
        &[
            "run",
            "--config",
            &cfg,
            "--mode",
            "cic",
            "--penetration",
            "0.8",
            "--out",
            "r",
            "--solver-log",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("r");
    let s = read_json(&out.join("summary.json"));
    let summary = s["summary"].as_object().unwrap();
    for key in [
        "mode",
        "model",
        "penetration",
        "scenario_id",
        "placement",
        "pv_count",
        "minutes",
        "available_kwh",
        "curtailed_kwh",
        "losses_kwh",
        "baseline_losses_kwh",
        "utilized_kwh",
        "utilized_percent",
        "curtails",
        "transformer_peak_kva",
        "max_oracle_voltage",
        "longest_run_above_trip",
        "events",
        "solver",
        "sigma",
    ] {
        assert!(summary.contains_key(key), "missing {key}");
    }
    assert_eq!(summary["mode"], "cic");
    assert_eq!(summary["minutes"], 690);
    assert!(summary["sigma"]["sigma"].as_f64().unwrap() >= 0.0);
    assert!(s["settings"].is_object());

    assert_eq!(
        header(&out.join("day_result.csv")),
        "t,bus,phase,v_model,v_oracle,p_inj,p_curt,q,losses_kw,slack_kva"
    );
    assert_eq!(header(&out.join("events.csv")), "t,inverter,event");
    let lines: Vec<Value> = std::fs::read_to_string(out.join("solver.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 690);
    for l in &lines {
        for key in [
            "t",
            "status",
            "iterations",
            "kkt_residual",
            "objective",
            "n_vars",
        ] {
            assert!(l.get(key).is_some(), "solver line missing {key}");
        }
    }
}

#[test]
fn sweep_outputs_have_expected_shape() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = gridvolt(
        &[
            "sweep",
            "--config",
            &cfg,
            "--penetration",
            "0.4,0.8",
            "--out",
            "s",
            "--jobs",
            "2",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = tmp.path().join("s");
    let runs = std::fs::read_to_string(out.join("sweep_runs.csv")).unwrap();
    // 3 modes x 2 levels x (2 clusters + 1 random)
    assert_eq!(runs.lines().count(), 1 + 3 * 2 * 3);
    let hosting = read_json(&out.join("hosting_capacity.json"));
    let rows = hosting.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r["mode"].is_string());
        for key in ["cap_min", "cap_max"] {
            let v = &r[key];
            assert!(v.is_number() || v == "above grid max", "{key}: {v}");
        }
    }
    assert!(header(&out.join("comparison.csv")).starts_with("penetration"));
}

#[test]
fn validate_reports_sigma_for_both_models() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let o = gridvolt(&["validate", "--config", &cfg, "--out", "v"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&tmp.path().join("v/validation.json"));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 6);
    for r in rows {
        assert!(r["model"] == "balanced" || r["model"] == "unbalanced");
        assert!(r["sigma"].as_f64().unwrap() >= 0.0);
        assert!(r["within_bound"].is_boolean());
    }
}

#[test]
fn generated_inputs_round_trip_through_run() {
    let tmp = tempfile::tempdir().unwrap();
    let g = gridvolt(
        &["gen-network", "--buses", "6", "--out", "net/feeder.json"],
        tmp.path(),
    );
    assert!(g.status.success());
    let g = gridvolt(
        &["gen-profiles", "--households", "4", "--out", "prof"],
        tmp.path(),
    );
    assert!(g.status.success());
    assert_eq!(
        header(&tmp.path().join("prof/pv.csv")),
        "timestamp,customer_id,p_kw"
    );
    let o = gridvolt(
        &[
            "run",
            "--network",
            "net/feeder.json",
            "--profiles",
            "prof",
            "--mode",
            "legacy",
            "--penetration",
            "0.6",
            "--scenario",
            "0",
            "--out",
            "r",
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&tmp.path().join("r/summary.json"));
    assert_eq!(s["summary"]["pv_count"].as_u64(), Some(3));
}
