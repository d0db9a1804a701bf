use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{parse_problem, preset, Problem};
use crate::poly::parse_poly;

fn problem(
    states: &str,
    inputs: &str,
    c: &str,
    g: &str,
    f: &str,
    omega: &str,
    horizon: f64,
) -> Problem {
    let n = states.split(',').count();
    parse_problem(&format!(
        r#"{{
            "states": [{states}],
            "inputs": {inputs},
            "running_cost": "{c}",
            "terminal_cost": "{g}",
            "dynamics": [{f}],
            "omega_h": "{omega}",
            "horizon_T": {horizon},
            "lambda_box": {lambda},
            "weight": {{ "type": "uniform" }},
            "degree": 4
        }}"#,
        lambda = serde_json::to_string(&vec![[-0.5, 0.5]; n]).unwrap()
    ))
    .unwrap()
}

fn poly(spec: &OcpSpec, text: &str) -> Polynomial {
    parse_poly(text, &spec.registry.names()).unwrap()
}

fn ex2() -> Problem {
    parse_problem(preset("ex2").unwrap()).unwrap()
}

#[test]
fn zero_dynamics_constant_trajectory() {
    let p = problem(
        r#""x""#,
        r#"{"names": []}"#,
        "0",
        "x",
        r#""0""#,
        "4 - x^2",
        1.0,
    );
    let tr = simulate(
        &p.spec,
        &Controller::Constant(vec![]),
        &[0.7],
        0.0,
        &IntegratorSettings::with_steps(100),
    )
    .unwrap();
    assert!(tr.states.iter().all(|x| x[0] == 0.7));
    assert_eq!(tr.times[0], 0.0);
    assert_eq!(*tr.times.last().unwrap(), 1.0);
    assert_eq!(tr.states.len(), tr.times.len());
}

#[test]
fn exponential_growth() {
    let p = problem(
        r#""x""#,
        r#"{"names": []}"#,
        "0",
        "x",
        r#""x""#,
        "100 - x^2",
        1.0,
    );
    let tr = simulate(
        &p.spec,
        &Controller::Constant(vec![]),
        &[1.0],
        0.0,
        &IntegratorSettings::default(),
    )
    .unwrap();
    assert!((tr.final_state()[0] - std::f64::consts::E).abs() < 1e-8);
    assert!(tr.max_error_estimate < 1e-12);
}

#[test]
fn rk4_is_fourth_order() {
    let p = problem(
        r#""x""#,
        r#"{"names": []}"#,
        "0",
        "x",
        r#""x""#,
        "100 - x^2",
        1.0,
    );
    let err = |steps| {
        let tr = simulate(
            &p.spec,
            &Controller::Constant(vec![]),
            &[1.0],
            0.0,
            &IntegratorSettings::with_steps(steps),
        )
        .unwrap();
        (tr.final_state()[0] - std::f64::consts::E).abs()
    };
    assert!(err(10) / err(20) >= 14.0);
    assert!(err(20) / err(40) >= 14.0);
}

#[test]
fn start_time_is_respected() {
    let p = problem(
        r#""x""#,
        r#"{"names": []}"#,
        "0",
        "x",
        r#""1""#,
        "100 - x^2",
        2.0,
    );
    let tr = simulate(
        &p.spec,
        &Controller::Constant(vec![]),
        &[0.0],
        0.5,
        &IntegratorSettings::with_steps(10),
    )
    .unwrap();
    assert_eq!(tr.times[0], 0.5);
    assert!((tr.final_state()[0] - 1.5).abs() < 1e-12);
    assert!(simulate(
        &p.spec,
        &Controller::Constant(vec![]),
        &[0.0],
        2.5,
        &IntegratorSettings::default()
    )
    .is_err());
    assert!(simulate(
        &p.spec,
        &Controller::Constant(vec![]),
        &[f64::NAN],
        0.0,
        &IntegratorSettings::default()
    )
    .is_err());
}

#[test]
fn safety_box_escape_reported() {
    let p = problem(
        r#""x""#,
        r#"{"names": []}"#,
        "0",
        "x",
        r#""x^2""#,
        "1 - x^2",
        5.0,
    );
    let err = simulate(
        &p.spec,
        &Controller::Constant(vec![]),
        &[1.0],
        0.0,
        &IntegratorSettings::with_steps(1000),
    )
    .unwrap_err();
    assert!(matches!(err, SimError::EscapedSafetyBox { .. }));
}

#[test]
fn ex2_constant_input_costs() {
    // x1 = t +- t^2/2 from (0, 1): int_0^5 x1^2 dt = 125/3 +- 625/4 + 625/4
    let p = ex2();
    let settings = IntegratorSettings::default();
    for (u, want) in [(1.0, 125.0 / 3.0 + 312.5), (-1.0, 125.0 / 3.0)] {
        let tr = simulate(
            &p.spec,
            &Controller::Constant(vec![u]),
            &[0.0, 1.0],
            0.0,
            &settings,
        )
        .unwrap();
        let c = cost(&p.spec, &tr);
        assert!((c - want).abs() / want < 1e-3, "u = {u}: {c} vs {want}");
    }
}

#[test]
fn ex2_switching_function_is_p_x2() {
    let p = ex2();
    let v = poly(&p.spec, "x1^2*x2 + 3*x2*t - x1 + x2^3");
    let Controller::BangBang { switching, .. } = extract_bangbang(&p.spec, &v).unwrap() else {
        panic!("expected a bang-bang controller");
    };
    assert_eq!(switching, vec![v.differentiate(1)]);
}

#[test]
fn constant_switching_cost_gives_minus_one() {
    let p = problem(
        r#""x""#,
        r#"{"names": ["u"], "box": [[-1, 1]]}"#,
        "u",
        "0",
        r#""x""#,
        "4 - x^2",
        1.0,
    );
    let ctrl = extract_bangbang(&p.spec, &Polynomial::zero(p.spec.nvars())).unwrap();
    let tr = simulate(
        &p.spec,
        &ctrl,
        &[0.3],
        0.0,
        &IntegratorSettings::with_steps(50),
    )
    .unwrap();
    assert!(tr.inputs.iter().all(|u| u[0] == -1.0));
}

#[test]
fn zero_switching_argument_gives_minus_one() {
    assert_eq!(sign(0.0), 1.0);
    let p = ex2();
    // V = 0 and c has no input term: the switching function is identically 0
    let ctrl = extract_bangbang(&p.spec, &Polynomial::zero(p.spec.nvars())).unwrap();
    let tr = simulate(
        &p.spec,
        &ctrl,
        &[0.0, 1.0],
        0.0,
        &IntegratorSettings::with_steps(50),
    )
    .unwrap();
    assert!(tr.inputs.iter().all(|u| u[0] == -1.0));
}

#[test]
fn non_affine_input_rejected() {
    let p = problem(
        r#""x""#,
        r#"{"names": ["u"], "box": [[-1, 1]]}"#,
        "u^2",
        "0",
        r#""x""#,
        "4 - x^2",
        1.0,
    );
    let err = extract_bangbang(&p.spec, &Polynomial::zero(p.spec.nvars())).unwrap_err();
    assert_eq!(err, SimError::NotInputAffine(0));
}

#[test]
fn shifted_box_bangbang_maps_back() {
    // s = dV/dx * df/du~ = 1 so u~ = -1, which is u = 0 on [0, 2]
    let p = problem(
        r#""x""#,
        r#"{"names": ["u"], "box": [[0, 2]]}"#,
        "0",
        "x",
        r#""u""#,
        "100 - x^2",
        1.0,
    );
    let ctrl = extract_bangbang(&p.spec, &poly(&p.spec, "x")).unwrap();
    let tr = simulate(
        &p.spec,
        &ctrl,
        &[0.0],
        0.0,
        &IntegratorSettings::with_steps(10),
    )
    .unwrap();
    assert!(tr.inputs.iter().all(|u| u[0] == 0.0));
    let v = poly(&p.spec, "-x");
    let tr = simulate(
        &p.spec,
        &extract_bangbang(&p.spec, &v).unwrap(),
        &[0.0],
        0.0,
        &IntegratorSettings::with_steps(10),
    )
    .unwrap();
    assert!(tr.inputs.iter().all(|u| u[0] == 2.0));
    assert!((tr.final_state()[0] - 2.0).abs() < 1e-12);
}

#[test]
fn argmin_agrees_with_bangbang() {
    let p = ex2();
    let v = poly(&p.spec, "x1^2*x2 - 2*x2*t + x1*x2^2 - x2");
    let bb = extract_bangbang(&p.spec, &v).unwrap();
    let am = extract_argmin(&p.spec, &v, 101).unwrap();
    let Controller::BangBang { switching, .. } = &bb else {
        panic!()
    };
    let (n, m) = (p.spec.n_states(), p.spec.m_inputs());
    let cb = CompiledController::new(&bb, n, m);
    let ca = CompiledController::new(&am, n, m);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut z = vec![0.0; p.spec.nvars()];
    let (mut ub, mut ua) = (vec![0.0], vec![0.0]);
    let mut compared = 0;
    while compared < 1000 {
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let t = rng.random_range(0.0..5.0);
        if switching[0].eval(&p.spec.point(&x, &[0.0], t)).abs() <= 1e-6 {
            continue;
        }
        cb.input(&x, t, &mut z, &mut ub);
        ca.input(&x, t, &mut z, &mut ua);
        assert_eq!(ub, ua, "at {x:?}, {t}");
        compared += 1;
    }
}

#[test]
fn argmin_of_quadratic_hamiltonian() {
    let p = problem(
        r#""x""#,
        r#"{"names": ["u"], "box": [[-1, 1]]}"#,
        "u^2 - 0.6*u + 0.09",
        "0",
        r#""0""#,
        "4 - x^2",
        1.0,
    );
    let ctrl = extract_argmin(&p.spec, &Polynomial::zero(p.spec.nvars()), 101).unwrap();
    let tr = simulate(
        &p.spec,
        &ctrl,
        &[0.0],
        0.0,
        &IntegratorSettings::with_steps(5),
    )
    .unwrap();
    assert!(tr.inputs.iter().all(|u| (u[0] - 0.3).abs() <= 0.01));
}

#[test]
fn argmin_on_single_point_set() {
    let p = problem(
        r#""x""#,
        r#"{"names": ["u"], "h": "-u^2", "bounds": [[0, 0]]}"#,
        "u",
        "0",
        r#""u""#,
        "4 - x^2",
        1.0,
    );
    let ctrl = extract_argmin(&p.spec, &poly(&p.spec, "x"), 11).unwrap();
    let tr = simulate(
        &p.spec,
        &ctrl,
        &[0.1],
        0.0,
        &IntegratorSettings::with_steps(5),
    )
    .unwrap();
    assert!(tr.inputs.iter().all(|u| u[0] == 0.0));
}

#[test]
fn empty_argmin_grid_rejected() {
    let p = problem(
        r#""x""#,
        r#"{"names": ["u"], "h": "-1 - u^2", "bounds": [[-1, 1]]}"#,
        "u",
        "0",
        r#""u""#,
        "4 - x^2",
        1.0,
    );
    assert_eq!(
        extract_argmin(&p.spec, &Polynomial::zero(p.spec.nvars()), 11).unwrap_err(),
        SimError::EmptyGrid
    );
}

#[test]
fn chattering_is_refined() {
    // u = -sign(x) drives x' = u to 0 and then chatters around it
    let p = problem(
        r#""x""#,
        r#"{"names": ["u"], "box": [[-1, 1]]}"#,
        "0",
        "x^2",
        r#""u""#,
        "100 - x^2",
        1.0,
    );
    let ctrl = extract_bangbang(&p.spec, &poly(&p.spec, "x^2")).unwrap();
    let settings = IntegratorSettings::with_steps(1000);
    let tr = simulate(&p.spec, &ctrl, &[0.5], 0.0, &settings).unwrap();
    assert!(tr.refined_steps > 0);
    assert_eq!(tr.times.len(), 1001);
    // sliding steps use 16 pieces
    assert!(
        tr.final_state()[0].abs() <= 1e-3 / 16.0 + 1e-12,
        "{}",
        tr.final_state()[0]
    );
    // the averaged input is the equivalent control u = 0
    let tail = &tr.inputs[900..1000];
    assert!(tail.iter().all(|u| u[0].abs() <= 0.125 + 1e-12), "{tail:?}");
    for u in &tr.inputs {
        assert!(p.spec.input_admissible(u, 1e-12));
    }
    assert!(tr.times.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn trajectory_csv_header() {
    let p = ex2();
    let tr = simulate(
        &p.spec,
        &Controller::Constant(vec![1.0]),
        &[0.0, 1.0],
        0.0,
        &IntegratorSettings::with_steps(4),
    )
    .unwrap();
    let csv = tr.to_csv(&p.spec);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,u"));
    assert_eq!(lines.count(), 5);
}

#[test]
fn bound_constant_for_ex1() {
    let p = parse_problem(preset("ex1").unwrap()).unwrap();
    let (c, sup) = bound_constant(&p.spec, &[(-2.4, 2.4)], 201);
    assert!((sup - 2.4).abs() < 1e-12);
    assert!((c - 4.8).abs() < 1e-12);
}

#[test]
fn exact_value_function_has_zero_loss_and_bound() {
    // x' = u, |u| <= 1, g = x: V(x, t) = x - (1 - t)
    let p = problem(
        r#""x""#,
        r#"{"names": ["u"], "box": [[-1, 1]]}"#,
        "0",
        "x",
        r#""u""#,
        "4 - x^2",
        1.0,
    );
    let j = poly(&p.spec, "x + t - 1");
    let oracle = AnalyticOracle {
        name: "translation".into(),
        function: |x: &[f64], t: f64| x[0] + t - 1.0,
    };
    let tr = simulate(
        &p.spec,
        &extract_bangbang(&p.spec, &j).unwrap(),
        &[0.4],
        0.0,
        &IntegratorSettings::with_steps(1000),
    )
    .unwrap();
    let realized = cost(&p.spec, &tr);
    assert!((realized - (0.4 - 1.0)).abs() < 1e-12);
    let report = performance_bound(
        &p.spec,
        &j,
        Some(&oracle),
        BoundRequest {
            x0: &[0.4],
            realized_cost: realized,
            reference_costs: BTreeMap::new(),
            omega_box: &[(-2.0, 2.0)],
            grid: 50,
        },
    )
    .unwrap();
    assert!(report.loss_estimate.abs() < 1e-12);
    assert!(report.bound_value < 1e-7, "{}", report.bound_value);
    assert!(report.bound_holds);
    assert!(performance_bound(
        &p.spec,
        &j,
        None,
        BoundRequest {
            x0: &[0.4],
            realized_cost: realized,
            reference_costs: BTreeMap::new(),
            omega_box: &[(-2.0, 2.0)],
            grid: 50,
        }
    )
    .is_err());
}

#[test]
fn ex1_oracle_solves_the_problem() {
    // the optimal input is -sign(x); check V(x0, 0) against a simulation
    let p = parse_problem(preset("ex1").unwrap()).unwrap();
    let oracle = Ex1Oracle::default();
    // s = dJ/dx * x = x, so the controller is -sign(x)
    let j = poly(&p.spec, "x");
    let ctrl = extract_bangbang(&p.spec, &j).unwrap();
    for x0 in [-0.5, -0.1, 0.25, 0.5] {
        let tr = simulate(&p.spec, &ctrl, &[x0], 0.0, &IntegratorSettings::default()).unwrap();
        assert!((cost(&p.spec, &tr) - oracle.value(&[x0], 0.0)).abs() < 1e-9);
    }
}
