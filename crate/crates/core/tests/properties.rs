use gridvolt::cicopt::{
    assemble, fairness_penalty, solve_cic, CicInverter, CicModel, CicSettings, ModelMode,
    SolveStatus,
};
use gridvolt::controllers::{injected_power, volt_var_q, volt_watt_p, DroopSettings};
use gridvolt::netmodel::{BusFile, CustomerField, LineFile, NetworkFile, Phase};
use gridvolt::pfsolve::{PowerFlow, PowerFlowSettings};
use gridvolt::{Complex, InverterState, LinearizationPoint, Network, PowerInjection};
use proptest::prelude::*;

type C = Complex<f64>;

/// Radial chain with one customer per non-slack bus, phases round-robin.
fn chain(lengths: &[f64], cable: &str) -> Network {
    let mut buses = vec![BusFile {
        id: 0,
        phase: "ABC".into(),
        customer: None,
        customer_phase: None,
    }];
    let mut lines = Vec::new();
    for (i, &l) in lengths.iter().enumerate() {
        let id = i as u64 + 1;
        buses.push(BusFile {
            id,
            phase: "ABC".into(),
            customer: Some(CustomerField::One(i)),
            customer_phase: Some(["A", "B", "C"][i % 3].into()),
        });
        lines.push(LineFile {
            from: id - 1,
            to: id,
            length_km: l,
            cable: cable.into(),
        });
    }
    NetworkFile {
        buses,
        lines,
        slack: 0,
        transformer_kva: 400.0,
        base_voltage_v: 230.0,
        base_kva: None,
        cables: vec![],
    }
    .into_network()
    .unwrap()
}

fn cable() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("ow95"), Just("ug150"), Just("ow50")]
}

fn inv3(z: &[[C; 3]; 3]) -> [[C; 3]; 3] {
    let m = |i: usize, j: usize| z[i][j];
    let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
        - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
        + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    let mut out = [[C::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            out[i][j] = (m(r0, c0) * m(r1, c1) - m(r0, c1) * m(r1, c0)) / det;
        }
    }
    out
}

const PHASES: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_model_is_linear_in_injections(
        lengths in prop::collection::vec(0.01f64..0.2, 2..6),
        cable in cable(),
        s1 in prop::collection::vec((-5.0f64..5.0, -2.0f64..2.0), 5),
        s2 in prop::collection::vec((-5.0f64..5.0, -2.0f64..2.0), 5),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        balanced in any::<bool>(),
    ) {
        let net = chain(&lengths, cable);
        let mode = if balanced { ModelMode::Balanced } else { ModelMode::Unbalanced };
        let model = CicModel::new(&net, mode).unwrap();
        let nc = lengths.len();
        let kva = |s: &[(f64, f64)]| -> Vec<C> { s[..nc].iter().map(|&(p, q)| C::new(p, q)).collect() };
        let (k1, k2) = (kva(&s1), kva(&s2));
        let mix: Vec<C> = k1.iter().zip(&k2).map(|(x, y)| x * a + y * b).collect();
        let vnom: Vec<C> = (0..model.n_nodes()).map(|i| C::from_polar(1.0 + 0.01 * i as f64, 0.002 * i as f64)).collect();
        let d = |s: &[C]| -> Vec<C> {
            model.predict(&vnom, &model.nodal_injections(s), true)
                .iter().zip(&vnom).map(|(v, n)| v - n).collect()
        };
        let (d1, d2, dm) = (d(&k1), d(&k2), d(&mix));
        for k in 0..dm.len() {
            let want = d1[k] * a + d2[k] * b;
            prop_assert!((dm[k] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn droop_curves_are_non_increasing(v1 in 150.0f64..300.0, dv in 0.0f64..40.0) {
        let s = DroopSettings::default();
        let v2 = v1 + dv;
        prop_assert!(volt_var_q(v2, &s) <= volt_var_q(v1, &s));
        if v1 > s.v_min {
            prop_assert!(volt_watt_p(v2, &s) <= volt_watt_p(v1, &s));
        }
    }

    #[test]
    fn droop_output_within_rating(v in 150.0f64..300.0, avail in 0.0f64..1.0, rating in 0.5f64..10.0) {
        let s = DroopSettings::default();
        let mut st = InverterState::new(rating);
        st.available = avail * rating;
        let (p, q) = injected_power(&st, v, &s);
        prop_assert!(p >= 0.0 && p <= st.available + 1e-12);
        prop_assert!(q <= 0.0);
        prop_assert!(p * p + q * q <= rating * rating * (1.0 + 1e-12));
    }

    #[test]
    fn power_flow_satisfies_nodal_balance(
        lengths in prop::collection::vec(0.01f64..0.15, 1..8),
        cable in cable(),
        loads in prop::collection::vec((-6.0f64..4.0, -2.0f64..2.0, 0usize..3), 8),
    ) {
        let net = chain(&lengths, cable);
        let inj: Vec<PowerInjection> = (0..lengths.len())
            .map(|i| PowerInjection::new(i + 1, PHASES[loads[i].2], loads[i].0, loads[i].1))
            .collect();
        let pf = PowerFlow::new(&net).unwrap();
        let sol = pf.solve(&inj, PowerFlowSettings::default()).unwrap();
        let base = net.base_kva();

        let zero = C::new(0.0, 0.0);
        let mut flow = vec![[zero; 3]; net.lines().len()];
        for (li, line) in net.lines().iter().enumerate() {
            let y = inv3(pf.segment_impedance_pu(li));
            for i in 0..3 {
                for j in 0..3 {
                    let dv = sol.voltage_pu(line.from_bus, PHASES[j]) - sol.voltage_pu(line.to_bus, PHASES[j]);
                    flow[li][i] += y[i][j] * dv;
                }
            }
        }
        let mut worst: f64 = 0.0;
        for b in 1..net.n_buses() {
            for (k, &ph) in PHASES.iter().enumerate() {
                let mut i_in = zero;
                for (li, line) in net.lines().iter().enumerate() {
                    if line.to_bus == b { i_in += flow[li][k]; }
                    if line.from_bus == b { i_in -= flow[li][k]; }
                }
                let spec: C = inj.iter().filter(|x| x.bus == b && x.phase == ph)
                    .map(|x| C::new(x.p_kw, x.q_kvar) / base).sum();
                let consumed = sol.voltage_pu(b, ph) * i_in.conj();
                worst = worst.max((consumed + spec).norm());
            }
        }
        prop_assert!(worst <= 1e-7, "nodal mismatch {worst:e}");

        let gen: f64 = inj.iter().map(|x| x.p_kw).sum();
        let slack = pf.slack_power(&sol);
        prop_assert!((slack.re + gen - pf.line_losses(&sol)).abs() < 1e-5);
    }

    #[test]
    fn balanced_inputs_give_symmetric_phases(
        lengths in prop::collection::vec(0.01f64..0.15, 1..8),
        cable in cable(),
        loads in prop::collection::vec((-4.0f64..3.0, -1.0f64..1.0), 8),
    ) {
        let net = chain(&lengths, cable);
        let inj: Vec<PowerInjection> = (0..lengths.len())
            .flat_map(|i| PHASES.map(|p| PowerInjection::new(i + 1, p, loads[i].0, loads[i].1)))
            .collect();
        let pf = PowerFlow::new(&net).unwrap();
        let sol = pf.solve(&inj, PowerFlowSettings { tol: 1e-12, max_iter: 200 }).unwrap();
        let shift = C::from_polar(1.0, -120f64.to_radians());
        for b in 0..net.n_buses() {
            let va = sol.voltage_pu(b, Phase::A);
            let vb = sol.voltage_pu(b, Phase::B);
            let vc = sol.voltage_pu(b, Phase::C);
            prop_assert!((vb - va * shift).norm() < 1e-9);
            prop_assert!((vc - vb * shift).norm() < 1e-9);
        }
    }
}

/// Voltage-constrained instance: a short chain with heavy uncontrolled
/// generation so that the cap binds.
fn instance(
    lengths: &[f64],
    avail: &[f64],
    v_max: f64,
    alpha: f64,
) -> (
    CicModel<f64>,
    Vec<CicInverter<f64>>,
    Vec<C>,
    Vec<C>,
    LinearizationPoint,
    CicSettings,
) {
    let net = chain(lengths, "ow95");
    let model = CicModel::new(&net, ModelMode::Unbalanced).unwrap();
    let nc = lengths.len();
    let inverters: Vec<CicInverter<f64>> = avail
        .iter()
        .enumerate()
        .map(|(c, &p)| CicInverter {
            customer: c,
            p_av: p,
            rating: 5.5,
            q_min_pu: -0.44,
            v_max,
        })
        .collect();
    let demand = vec![C::new(0.3, 0.1); nc];
    let fixed: Vec<C> = (0..nc)
        .map(|c| {
            if c < avail.len() {
                C::new(0.0, 0.0)
            } else {
                C::new(4.0, 0.0)
            }
        })
        .collect();
    let point = LinearizationPoint::flat(model.n_nodes(), 0.4);
    let settings = CicSettings {
        alpha,
        ..CicSettings::default()
    };
    (model, inverters, demand, fixed, point, settings)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn optimal_setpoints_pass_independent_check(
        lengths in prop::collection::vec(0.05f64..0.25, 3..7),
        avail in prop::collection::vec(0.0f64..5.5, 1..4),
        v_max in 236.0f64..257.0,
        alpha in prop_oneof![Just(0.0), 0.0f64..5.0],
    ) {
        let n_inv = avail.len().min(lengths.len());
        let (model, inv, demand, fixed, point, settings) = instance(&lengths, &avail[..n_inv], v_max, alpha);
        let prob = assemble(&model, &inv, &demand, &fixed, &point, &settings).unwrap();
        let sol = solve_cic(&prob);
        prop_assume!(sol.status == SolveStatus::Optimal);

        let mut net_kva: Vec<C> = demand.iter().zip(&fixed).map(|(d, f)| f - d).collect();
        for (i, x) in inv.iter().enumerate() {
            let ub = (x.p_av - demand[x.customer].re).max(0.0);
            prop_assert!(sol.p_curt[i] >= -1e-9 && sol.p_curt[i] <= ub + 1e-9);
            prop_assert!(sol.q[i] <= 1e-9 && sol.q[i] >= x.q_min_pu * x.rating - 1e-9);
            let out = x.p_av - sol.p_curt[i];
            prop_assert!(out * out + sol.q[i] * sol.q[i] <= x.rating * x.rating + 1e-6);
            net_kva[x.customer] += C::new(out, sol.q[i]);
        }
        let v = model.predict(&point.vnom, &model.nodal_injections(&net_kva), true);
        for x in &inv {
            let k = model.customer_node(x.customer).unwrap();
            prop_assert!(v[k].norm() * 230.0 <= x.v_max + 1e-4, "{} > {}", v[k].norm() * 230.0, x.v_max);
        }
    }

    #[test]
    fn fairness_weight_trades_losses_for_equality(
        lengths in prop::collection::vec(0.1f64..0.3, 4..7),
        avail in prop::collection::vec(3.0f64..5.5, 2..4),
        v_max in 240.0f64..250.0,
    ) {
        let n_inv = avail.len().min(lengths.len());
        let mut last: Option<(f64, f64)> = None;
        for alpha in [0.0, 0.1, 1.0, 10.0] {
            let (model, inv, demand, fixed, point, settings) = instance(&lengths, &avail[..n_inv], v_max, alpha);
            let prob = assemble(&model, &inv, &demand, &fixed, &point, &settings).unwrap();
            let sol = solve_cic(&prob);
            prop_assume!(sol.status == SolveStatus::Optimal);
            let cost = sol.p_curt.iter().sum::<f64>() + sol.losses_kw;
            let var = fairness_penalty(&sol.p_curt, &prob.curtail_ub, 1.0);
            if let Some((c0, v0)) = last {
                prop_assert!(cost >= c0 - 1e-6, "alpha {alpha}: cost {cost} < {c0}");
                prop_assert!(var <= v0 + 1e-6, "alpha {alpha}: variance {var} > {v0}");
            }
            last = Some((cost, var));
        }
    }
}
