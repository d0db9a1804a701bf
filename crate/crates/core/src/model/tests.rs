use super::*;
use crate::poly::parse_poly;
use crate::sim::{simulate_schedule, IntegratorSettings};

fn scalar_problem(dynamics: &str, omega: &str, lambda: [f64; 2], horizon: f64) -> Problem {
    parse_problem(&format!(
        r#"{{
            "states": ["x"],
            "inputs": {{ "names": [] }},
            "running_cost": "0",
            "terminal_cost": "x",
            "dynamics": ["{dynamics}"],
            "omega_h": "{omega}",
            "horizon_T": {horizon},
            "lambda_box": [[{}, {}]],
            "weight": {{ "type": "uniform" }},
            "degree": 4
        }}"#,
        lambda[0], lambda[1]
    ))
    .unwrap()
}

fn with_field(key: &str, value: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(preset("ex2").unwrap()).unwrap();
    v[key] = serde_json::from_str(value).unwrap();
    v.to_string()
}

#[test]
fn presets_parse() {
    for name in PRESET_NAMES {
        let p = parse_problem(preset(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(p.spec.dynamics.len(), p.spec.n_states());
    }
    let ex4 = parse_problem(preset("ex4").unwrap()).unwrap();
    assert_eq!(ex4.spec.m_inputs(), 0);
    assert_eq!(ex4.spec.nvars(), 4);
    assert_eq!(ex4.config.weight, Weight::Dirac { time: 0.0 });
}

#[test]
fn non_polynomial_expression_rejected() {
    let err = parse_problem(&with_field("running_cost", r#""sin(x1)""#)).unwrap_err();
    assert!(matches!(err, ModelError::Poly { .. }), "{err}");
}

#[test]
fn unknown_variable_rejected() {
    let err = parse_problem(&with_field("running_cost", r#""y^2""#)).unwrap_err();
    assert!(
        matches!(err, ModelError::UnknownVariable(ref v) if v == "y"),
        "{err}"
    );
}

#[test]
fn degree_overflow_rejected() {
    let err = parse_problem(&with_field("degree", "31")).unwrap_err();
    assert!(matches!(err, ModelError::DegreeOverflow(31)));
    assert!(parse_problem(&with_field("degree", "30")).is_ok());
}

#[test]
fn unknown_key_rejected() {
    let err = parse_problem(&with_field("tolerance", "1")).unwrap_err();
    assert!(matches!(err, ModelError::Schema(_)));
}

#[test]
fn time_in_terminal_cost_rejected() {
    let err = parse_problem(&with_field("terminal_cost", r#""t*x1""#)).unwrap_err();
    assert!(matches!(err, ModelError::Invalid(_)));
}

#[test]
fn serialize_round_trips() {
    for name in PRESET_NAMES {
        let p = parse_problem(preset(name).unwrap()).unwrap();
        let again = parse_problem(&serialize_problem(&p)).unwrap();
        assert_eq!(p, again, "{name}");
    }
    let mut p = parse_problem(preset("ex1").unwrap()).unwrap();
    p.config.scaling = DomainScaling::Lambda;
    p.config.dissipation_multipliers = Some(vec![2, 4, 4]);
    assert_eq!(parse_problem(&serialize_problem(&p)).unwrap(), p);
}

#[test]
fn normalize_shifted_box() {
    let text = with_field("inputs", r#"{ "names": ["u"], "box": [[0, 2]] }"#);
    let p = parse_problem(&text).unwrap();
    let (norm_spec, map) = p.spec.normalize_input_box().unwrap();
    assert_eq!(map.mid, vec![1.0]);
    assert_eq!(map.half, vec![1.0]);
    // f2 = u becomes u~ + 1
    let names = p.spec.registry.names();
    assert_eq!(norm_spec.dynamics[1], parse_poly("u + 1", &names).unwrap());
    assert_eq!(map.to_original(&[-1.0]), vec![0.0]);
    assert_eq!(map.to_original(&[1.0]), vec![2.0]);
    assert_eq!(map.to_normalized(&[0.5]), vec![-0.5]);
}

#[test]
fn normalize_unit_box_is_identity() {
    let p = parse_problem(preset("ex2").unwrap()).unwrap();
    let (norm_spec, map) = p.spec.normalize_input_box().unwrap();
    assert_eq!(norm_spec, p.spec);
    assert_eq!(map, InputNormalization::identity(1));
}

#[test]
fn normalize_rejects_degenerate_interval() {
    let mut p = parse_problem(preset("ex2").unwrap()).unwrap();
    p.spec.inputs = InputSet::Box(InputBox {
        intervals: vec![(1.0, 1.0)],
    });
    assert!(matches!(
        p.spec.normalize_input_box(),
        Err(ModelError::DegenerateInterval(0))
    ));
}

#[test]
fn normalization_preserves_trajectories() {
    let text = with_field("inputs", r#"{ "names": ["u"], "box": [[-0.5, 2]] }"#);
    let spec = parse_problem(&text).unwrap().spec;
    let (norm_spec, map) = spec.normalize_input_box().unwrap();
    let schedule: Vec<Vec<f64>> = [2.0, -0.5, 0.3, 1.7, 0.0]
        .iter()
        .map(|&u| vec![u])
        .collect();
    let normalized: Vec<Vec<f64>> = schedule.iter().map(|u| map.to_normalized(u)).collect();
    let settings = IntegratorSettings::with_steps(5_000);
    let a = simulate_schedule(&spec, &schedule, &[0.0, 1.0], &settings).unwrap();
    let b = simulate_schedule(&norm_spec, &normalized, &[0.0, 1.0], &settings).unwrap();
    let gap = a
        .states
        .iter()
        .zip(&b.states)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    assert!(gap < 1e-9, "{gap}");
}

#[test]
fn input_domain_polys_match_box() {
    let text = with_field("inputs", r#"{ "names": ["u"], "box": [[0, 2]] }"#);
    let spec = parse_problem(&text).unwrap().spec;
    let h = &spec.input_domain_polys()[0].1;
    // 1 - (u - 1)^2 vanishes at the ends and is 1 at the middle
    for (u, want) in [(0.0, 0.0), (2.0, 0.0), (1.0, 1.0), (3.0, -3.0)] {
        assert!((h.eval(&spec.point(&[0.0, 0.0], &[u], 0.0)) - want).abs() < 1e-12);
    }
}

#[test]
fn omega_bounds_of_ball() {
    let spec = parse_problem(preset("ex2").unwrap()).unwrap().spec;
    for (lo, hi) in spec.omega_bounds(&[0.0, 0.0]) {
        assert!(
            (lo + 10.0).abs() < 0.11 && (hi - 10.0).abs() < 0.11,
            "{lo} {hi}"
        );
    }
}

#[test]
fn stationary_flow_is_contained() {
    let p = scalar_problem("0", "4 - x^2", [-1.0, 1.0], 10.0);
    let r = check_containment_condition(&p.spec, &p.config, 200, 1).unwrap();
    assert_eq!(r.fraction, 1.0);
    assert!(r.violation.is_none());
}

#[test]
fn blow_up_escapes() {
    // x' = x^2 reaches infinity at t = 1/x0, so every x0 > 1/T escapes
    let p = scalar_problem("x^2", "4 - x^2", [-2.0, 2.0], 10.0);
    let r = check_containment_condition(&p.spec, &p.config, 200, 2).unwrap();
    assert!(r.fraction < 1.0);
    let v = r.violation.unwrap();
    assert!(v.x0[0] > 0.0);
}

#[test]
fn ex2_box_escapes_under_full_input() {
    // u = 1 from (0.6, 1): x1(5) = 0.6 + 5 + 12.5 = 18.1, outside the radius-10 ball
    let p = parse_problem(preset("ex2").unwrap()).unwrap();
    let tr = simulate_schedule(
        &p.spec,
        &[vec![1.0]],
        &[0.6, 1.0],
        &IntegratorSettings::with_steps(1000),
    );
    let x = tr.unwrap().final_state().to_vec();
    assert!((x[0] - 18.1).abs() < 1e-9 && (x[1] - 6.0).abs() < 1e-9);

    let r = check_containment_condition(&p.spec, &p.config, 500, 3).unwrap();
    assert!(r.fraction < 1.0);
    let v = r.violation.unwrap();
    let mut z = vec![0.0; p.spec.nvars()];
    z[..2].copy_from_slice(&v.exit_state);
    assert!(!p.spec.omega.contains(&z));
}

#[test]
fn containment_is_deterministic() {
    let p = parse_problem(preset("ex2").unwrap()).unwrap();
    let a = check_containment_condition(&p.spec, &p.config, 64, 9).unwrap();
    let b = check_containment_condition(&p.spec, &p.config, 64, 9).unwrap();
    assert_eq!(a.contained, b.contained);
    assert_eq!(a.violation.map(|v| v.sample), b.violation.map(|v| v.sample));
}
