use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{parse_problem, preset, Problem};
use crate::sim::{Ex1Oracle, ValueOracle};

fn load(name: &str) -> Problem {
    parse_problem(preset(name).unwrap()).unwrap()
}

fn with_degree(p: &Problem, d: u32) -> SynthesisConfig {
    let mut c = p.config.clone();
    c.degree = d;
    c
}

fn solve(p: &Problem, d: u32) -> SubValueCertificate {
    synthesize(&p.spec, &with_degree(p, d), &SolverSettings::default())
        .unwrap()
        .certificate
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn coefficient_counts() {
    let ex1 = load("ex1");
    let prog = build_sdp(&ex1.spec, &with_degree(&ex1, 4)).unwrap();
    assert_eq!(prog.p_basis.len(), binomial(6, 2) as usize);
    assert_eq!(prog.sdp.n_free, 15);
    let ex2 = load("ex2");
    let prog = build_sdp(&ex2.spec, &with_degree(&ex2, 3)).unwrap();
    assert_eq!(prog.sdp.n_free, 20);
}

#[test]
fn dissipation_rows_cover_every_monomial() {
    // Ex2 at d=3 matches k1 at degree 4 over (x1, x2, u, t).
    let ex2 = load("ex2");
    let prog = build_sdp(&ex2.spec, &with_degree(&ex2, 3)).unwrap();
    assert_eq!(prog.dissipation.matched_degree, 4);
    let mut count = 0;
    for a in 0..=4u32 {
        for b in 0..=4 - a {
            for c in 0..=4 - a - b {
                for _d in 0..=4 - a - b - c {
                    count += 1;
                }
            }
        }
    }
    assert_eq!(prog.dissipation.rows.len(), count);
}

#[test]
fn low_degree_rejected() {
    let ex1 = load("ex1");
    assert_eq!(required_degree(&ex1.spec), 3);
    let err = build_sdp(&ex1.spec, &with_degree(&ex1, 2)).unwrap_err();
    assert!(matches!(err, HjbError::DegreeTooLow { degree: 2, required: 3 }), "{err}");
    assert!(err.to_string().contains("raise degree"));
}

#[test]
fn dirac_weight_moments() {
    let ex4 = load("ex4");
    let cert = solve(&ex4, 4);
    let lam = &ex4.config.lambda_box;
    for (e, a) in cert.basis.iter().zip(&cert.alpha) {
        if e[3] > 0 {
            assert_eq!(*a, 0.0, "{e:?}");
        } else {
            let want: f64 = (0..3)
                .map(|i| {
                    let k = e[i] as i32 + 1;
                    (lam[i].1.powi(k) - lam[i].0.powi(k)) / k as f64
                })
                .product();
            assert!((a - want).abs() < 1e-12, "{e:?}: {a} vs {want}");
        }
    }
}

#[test]
fn zero_costs_give_zero() {
    let p = parse_problem(
        r#"{
            "states": ["x"],
            "inputs": { "names": ["u"], "box": [[-1, 1]] },
            "running_cost": "0",
            "terminal_cost": "0",
            "dynamics": ["u"],
            "omega_h": "1 - x^2",
            "horizon_T": 1,
            "lambda_box": [[-0.5, 0.5]],
            "weight": { "type": "uniform" },
            "degree": 2
        }"#,
    )
    .unwrap();
    let cert = solve(&p, 2);
    assert!(cert.objective_value.abs() < 1e-7, "{}", cert.objective_value);
    let max = cert.coefficients.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    assert!(max < 1e-4, "{max}");
}

#[test]
fn ex1_certificate_dominates_value_function() {
    let ex1 = load("ex1");
    let config = with_degree(&ex1, 4);
    let cert = solve(&ex1, 4);
    let report = verify_certificate(&ex1.spec, &config, &cert, 1e-6, 10_000, 7).unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.samples, 10_000);

    let p = cert.polynomial(&ex1.spec).unwrap();
    let oracle = Ex1Oracle::default();
    let (lo, hi) = ex1.config.lambda_box[0];
    let mut worst = f64::NEG_INFINITY;
    let mut points = Vec::new();
    for i in 0..200 {
        for j in 0..200 {
            let x = lo + (hi - lo) * i as f64 / 199.0;
            let t = j as f64 / 199.0;
            let z = ex1.spec.point(&[x], &[0.0], t);
            worst = worst.max(p.eval(&z) - oracle.value(&[x], t));
            points.push(vec![x, t]);
        }
    }
    assert!(worst <= 1e-6, "{worst}");
    let field = hjb_residual(&p, &ex1.spec, &points).unwrap();
    assert!(field.min >= -1e-6, "{}", field.min);
}

#[test]
fn sweep_objective_is_monotone() {
    let ex1 = load("ex1");
    let oracle = Ex1Oracle::default();
    let opts = SweepOptions {
        l1_points_per_axis: 100,
        ..Default::default()
    };
    let study = degree_sweep(&ex1.spec, &ex1.config, &[4, 6, 8], Some(&oracle), &opts);
    assert_eq!(study.records.len(), 3);
    assert!(study.records.iter().all(|r| r.status == "optimal"));
    assert!(study.objective_monotone(1e-7), "{}", study.to_csv());
    let l1: Vec<f64> = study.records.iter().map(|r| r.l1_error.unwrap()).collect();
    assert!(l1[2] < l1[0], "{l1:?}");
    assert!(study.to_csv().starts_with("degree,status,objective,l1_error\n4,optimal,"));

    let empty = degree_sweep(&ex1.spec, &ex1.config, &[], None, &opts);
    assert!(empty.records.is_empty());
}

#[test]
fn sweep_records_failures_and_continues() {
    let ex1 = load("ex1");
    let opts = SweepOptions {
        parallel: false,
        ..Default::default()
    };
    let study = degree_sweep(&ex1.spec, &ex1.config, &[2, 4], None, &opts);
    assert_eq!(study.records[0].status, "degree_too_low");
    assert!(study.records[0].error.is_some());
    assert_eq!(study.records[1].status, "optimal");
    assert!(study.records[1].l1_error.is_none());
}

#[test]
fn objective_matches_monte_carlo() {
    let ex2 = load("ex2");
    let cert = solve(&ex2, 3);
    let p = cert.polynomial(&ex2.spec).unwrap();
    let lam = &ex2.config.lambda_box;
    let vol = lam.iter().map(|(a, b)| b - a).product::<f64>() * ex2.spec.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let count = 1_000_000;
    let (mut sum, mut sq) = (0.0, 0.0);
    let mut z = vec![0.0; ex2.spec.nvars()];
    for _ in 0..count {
        for (i, &(a, b)) in lam.iter().enumerate() {
            z[i] = rng.random_range(a..b);
        }
        z[ex2.spec.time_index()] = rng.random_range(0.0..ex2.spec.horizon);
        let v = p.eval(&z);
        sum += v;
        sq += v * v;
    }
    let mean = sum / count as f64;
    let se = ((sq / count as f64 - mean * mean) / count as f64).sqrt() * vol;
    let estimate = mean * vol;
    assert!(
        (estimate - cert.objective_value).abs() <= 3.0 * se,
        "{estimate} vs {} (se {se})",
        cert.objective_value
    );
}

#[test]
fn analytic_value_solves_hjb_away_from_kink() {
    let ex1 = load("ex1");
    let mut points = Vec::new();
    for i in 0..41 {
        let x = -2.0 + 0.1 * i as f64;
        if x.abs() < 0.05 {
            continue;
        }
        for j in 0..=10 {
            points.push(vec![x, j as f64 / 10.0]);
        }
    }
    let field = hjb_residual_with(&ex1.spec, &points, |x, t| {
        let x = x[0];
        let k = if x > 0.0 { (t - 1.0).exp() } else { (1.0 - t).exp() };
        let dt = if x > 0.0 { k * x } else { -k * x };
        (dt, vec![k])
    })
    .unwrap();
    let worst = field.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn constant_function_has_zero_residual() {
    let p = parse_problem(
        r#"{
            "states": ["x1", "x2"],
            "inputs": { "names": ["u"], "box": [[0, 2]] },
            "running_cost": "0",
            "terminal_cost": "x1",
            "dynamics": ["x2*u", "x1 - u"],
            "omega_h": "4 - x1^2 - x2^2",
            "horizon_T": 1,
            "lambda_box": [[-1, 1], [-1, 1]],
            "weight": { "type": "uniform" },
            "degree": 2
        }"#,
    )
    .unwrap();
    let k = Polynomial::constant(p.spec.nvars(), 3.5);
    let points = vec![vec![0.1, -0.3, 0.2], vec![1.0, 1.0, 0.9]];
    let field = hjb_residual(&k, &p.spec, &points).unwrap();
    assert!(field.closed_form);
    assert!(field.values.iter().all(|v| *v == 0.0));
}

#[test]
fn closed_form_agrees_with_grid() {
    // Same affine problem posed with a box and as a semialgebraic set.
    let ex1 = load("ex1");
    let mut boxed = ex1.clone();
    boxed.spec.inputs = crate::model::InputSet::Box(crate::model::InputBox {
        intervals: vec![(-1.0, 1.0)],
    });
    let cert = solve(&ex1, 4);
    let p = cert.polynomial(&ex1.spec).unwrap();
    let points: Vec<Vec<f64>> = (0..20).map(|i| vec![-2.0 + 0.2 * i as f64, 0.05 * i as f64]).collect();
    let a = hjb_residual(&p, &ex1.spec, &points).unwrap();
    let b = hjb_residual(&p, &boxed.spec, &points).unwrap();
    assert!(!a.closed_form && b.closed_form);
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((x - y).abs() < 1e-10, "{x} {y}");
    }
}

#[test]
fn certificate_json_round_trip() {
    let ex1 = load("ex1");
    let config = with_degree(&ex1, 4);
    let cert = solve(&ex1, 4);
    let again = SubValueCertificate::from_json(&cert.to_json()).unwrap();
    assert_eq!(again.coefficients, cert.coefficients);
    assert_eq!(again.polynomial(&ex1.spec).unwrap(), cert.polynomial(&ex1.spec).unwrap());
    assert!(verify_certificate(&ex1.spec, &config, &again, 1e-6, 1000, 1).unwrap().passed);

    let mut bad = again.clone();
    let k1 = bad.constraints.iter_mut().find(|c| c.label == "k1").unwrap();
    k1.residual.upper[0] += 0.5;
    let report = verify_certificate(&ex1.spec, &config, &bad, 1e-6, 1000, 1).unwrap();
    assert!(!report.passed);
    assert!(report.max_relative_identity_residual > 1e-3);
}

#[test]
fn scaling_choices_agree() {
    let ex2 = load("ex2");
    let mut objs = Vec::new();
    for s in [DomainScaling::Omega, DomainScaling::Lambda, DomainScaling::None] {
        let mut c = with_degree(&ex2, 3);
        c.scaling = s;
        let cert = synthesize(&ex2.spec, &c, &SolverSettings::default()).unwrap().certificate;
        objs.push(cert.objective_value);
    }
    for o in &objs[1..] {
        assert!((o - objs[0]).abs() < 1e-5 * (1.0 + objs[0].abs()), "{objs:?}");
    }
}

#[test]
fn domain_map_round_trip() {
    let map = DomainMap {
        scale: vec![2.0, 0.5],
        offset: vec![1.0, -1.0],
    };
    let p = crate::poly::parse_poly::<f64>("x^2*y - 3*y + 1", &["x", "y"]).unwrap();
    let back = map.to_original(&map.to_scaled(&p).unwrap()).unwrap();
    assert!((&back - &p).max_abs_coeff() < 1e-12);
    let z = [0.3, -0.7];
    let zs = map.point_to_scaled(&z);
    assert!((map.to_scaled(&p).unwrap().eval(&zs) - p.eval(&z)).abs() < 1e-12);
}
