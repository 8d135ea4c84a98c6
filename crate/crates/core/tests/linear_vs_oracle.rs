use gridvolt::cicopt::{CicModel, ModelMode};
use gridvolt::netmodel::{NetworkFile, Phase};
use gridvolt::pfsolve::{PowerFlow, PowerFlowSettings};
use gridvolt::simeng::interpolate_profile;
use gridvolt::{Complex, Network, PowerInjection};

fn network(json: &str) -> Network {
    serde_json::from_str::<NetworkFile>(json)
        .unwrap()
        .into_network()
        .unwrap()
}

fn two_bus_single_phase() -> Network {
    network(
        r#"{"slack":0,
            "buses":[{"id":0,"phase":"ABC"},{"id":1,"phase":"A","customer":0}],
            "lines":[{"from":0,"to":1,"length_km":1.0,"cable":"ow95"}]}"#,
    )
}

fn two_bus_three_customers() -> Network {
    network(
        r#"{"slack":0,
            "buses":[{"id":0,"phase":"ABC"},{"id":1,"phase":"ABC","customer":[0,1,2]}],
            "lines":[{"from":0,"to":1,"length_km":0.5,"cable":"ow95"}]}"#,
    )
}

fn settings() -> PowerFlowSettings {
    PowerFlowSettings {
        tol: 1e-12,
        max_iter: 200,
    }
}

#[test]
fn single_injection_rise_matches_oracle() {
    let net = two_bus_single_phase();
    let model = CicModel::new(&net, ModelMode::Unbalanced).unwrap();
    let inj = model.nodal_injections(&[Complex::new(5.0, 0.0)]);
    let flat = vec![Complex::new(1.0, 0.0); model.n_nodes()];
    let v = model.predict(&flat, &inj, true);
    let k = model.customer_node(0).unwrap();
    let rise_linear = (v[k].re - 1.0) * 230.0;

    let pf = PowerFlow::new(&net).unwrap();
    let sol = pf
        .solve(&[PowerInjection::new(1, Phase::A, 5.0, 0.0)], settings())
        .unwrap();
    let rise_oracle = sol.magnitude_volts(1, Phase::A) - 230.0;

    let hand = 0.452 * 5000.0 / 230.0;
    assert!((rise_linear - hand).abs() < 1e-9, "{rise_linear} vs {hand}");
    let rel = (rise_linear - rise_oracle).abs() / rise_oracle;
    assert!(rel < 0.05, "linear {rise_linear} oracle {rise_oracle}");
    assert!(rise_linear > rise_oracle);
}

#[test]
fn balanced_injection_gives_equal_phase_rises() {
    let net = two_bus_three_customers();
    let model = CicModel::new(&net, ModelMode::Unbalanced).unwrap();
    let kva = vec![Complex::new(4.0, -1.0); 3];
    let inj = model.nodal_injections(&kva);
    let flat = vec![Complex::new(1.0, 0.0); model.n_nodes()];
    let v = model.predict(&flat, &inj, true);
    let mags: Vec<f64> = (0..3)
        .map(|c| v[model.customer_node(c).unwrap()].norm())
        .collect();
    for m in &mags[1..] {
        assert!((m - mags[0]).abs() < 1e-12);
    }

    let pf = PowerFlow::new(&net).unwrap();
    let sol = pf
        .solve(&model.oracle_injections(&kva), settings())
        .unwrap();
    let oracle: Vec<f64> = [Phase::A, Phase::B, Phase::C]
        .iter()
        .map(|&p| sol.magnitude_volts(1, p))
        .collect();
    for m in &oracle[1..] {
        assert!((m - oracle[0]).abs() < 1e-9);
    }
    let rise_linear = mags[0] * 230.0 - 230.0;
    let rise_oracle = oracle[0] - 230.0;
    assert!(
        (rise_linear - rise_oracle).abs() < 0.05 * rise_oracle,
        "linear {rise_linear} oracle {rise_oracle}"
    );
}

#[test]
fn segment_loss_for_unit_voltage_drop() {
    let net = two_bus_single_phase();
    let model = CicModel::new(&net, ModelMode::Unbalanced).unwrap();
    let mut v = vec![Complex::new(1.0, 0.0); model.n_nodes()];
    v[model.customer_node(0).unwrap()] = Complex::new(1.0 - 1.0 / 230.0, 0.0);
    let watts = model.losses_kw(&v) * 1000.0;
    let z = Complex::new(0.452, 0.270);
    let expect = (Complex::new(1.0, 0.0) / z).re;
    assert!((watts - expect).abs() < 1e-9, "{watts} vs {expect}");
    assert!((watts - 1.631).abs() < 1e-3);
}

#[test]
fn oracle_losses_equal_branch_current_heating() {
    let net = two_bus_single_phase();
    let pf = PowerFlow::new(&net).unwrap();
    let sol = pf
        .solve(&[PowerInjection::load(1, Phase::A, 4.0, 1.3)], settings())
        .unwrap();
    let z = Complex::new(0.452, 0.270);
    let drop = sol.voltage_volts(0, Phase::A) - sol.voltage_volts(1, Phase::A);
    let current = drop / z;
    let expect_kw = current.norm_sqr() * z.re / 1000.0;
    assert!((pf.line_losses(&sol) - expect_kw).abs() < 1e-9);
}

/// Natural cubic spline built from the full 4(n−1) coefficient system.
fn reference_spline(x: &[f64], y: &[f64], at: &[f64]) -> Vec<f64> {
    let pieces = x.len() - 1;
    let n = 4 * pieces;
    let mut a = vec![vec![0.0; n + 1]; n];
    let mut row = 0;
    let poly = |t: f64, d: usize| -> [f64; 4] {
        match d {
            0 => [1.0, t, t * t, t * t * t],
            1 => [0.0, 1.0, 2.0 * t, 3.0 * t * t],
            _ => [0.0, 0.0, 2.0, 6.0 * t],
        }
    };
    for i in 0..pieces {
        for (t, val) in [(x[i], y[i]), (x[i + 1], y[i + 1])] {
            a[row][4 * i..4 * i + 4].copy_from_slice(&poly(t, 0));
            a[row][n] = val;
            row += 1;
        }
    }
    for i in 0..pieces - 1 {
        for d in 1..=2 {
            let c = poly(x[i + 1], d);
            for j in 0..4 {
                a[row][4 * i + j] = c[j];
                a[row][4 * (i + 1) + j] = -c[j];
            }
            row += 1;
        }
    }
    a[row][0..4].copy_from_slice(&poly(x[0], 2));
    row += 1;
    a[row][4 * (pieces - 1)..n].copy_from_slice(&poly(x[pieces], 2));

    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    let coef: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
    at.iter()
        .map(|&t| {
            let i = x.windows(2).position(|w| t <= w[1]).unwrap_or(pieces - 1);
            let p = poly(t, 0);
            (0..4).map(|j| coef[4 * i + j] * p[j]).sum()
        })
        .collect()
}

#[test]
fn spline_matches_reference_on_single_hump() {
    let knots = [0.0, 0.4, 1.5, 3.2, 4.6, 5.0, 4.4, 3.0, 1.4, 0.5, 0.1];
    let got = interpolate_profile(&knots).unwrap();
    let hours: Vec<f64> = (0..knots.len()).map(|i| i as f64 * 0.5).collect();
    let at: Vec<f64> = (0..got.len()).map(|m| m as f64 / 60.0).collect();
    let want = reference_spline(&hours, &knots, &at);
    assert_eq!(got.len(), (knots.len() - 1) * 30 + 1);
    for (m, (g, w)) in got.iter().zip(&want).enumerate() {
        assert!((g - w.max(0.0)).abs() < 1e-9, "minute {m}: {g} vs {w}");
    }
}
