use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{parse_problem, preset, Problem};
use crate::sim::Ex1Oracle;

fn within(est: &VolumeEstimate, want: f64, k: f64) -> bool {
    (est.value - want).abs() <= k * est.standard_error.max(1e-12)
}

#[test]
fn box_volume_matches() {
    let domain = [(0.0, 2.0), (-1.0, 1.0)];
    let inner = BoxRegion(vec![(0.5, 1.5), (-0.5, 0.25)]);
    let est = volume(&inner, &domain, 200_000, 3).unwrap();
    assert!(within(&est, 0.75, 3.0), "{est:?}");
    assert!(est.value >= 0.0 && est.value <= 4.0);
    assert_eq!(est.samples, 200_000);
    assert_eq!(est.seed, 3);
}

#[test]
fn metric_identities() {
    let domain = [(0.0, 1.0), (0.0, 1.0)];
    let a = BoxRegion(vec![(0.1, 0.6), (0.2, 0.9)]);
    let b = BoxRegion(vec![(0.0, 0.8), (0.1, 1.0)]);
    assert_eq!(volume_metric(&a, &a, &domain, 10_000, 1).unwrap().value, 0.0);
    // nested boxes: vol(B) - vol(A)
    let est = volume_metric(&a, &b, &domain, 400_000, 1).unwrap();
    assert!(within(&est, 0.72 - 0.35, 3.0), "{est:?}");
    let ab = volume_metric(&a, &b, &domain, 10_000, 9).unwrap();
    let ba = volume_metric(&b, &a, &domain, 10_000, 9).unwrap();
    assert_eq!(ab, ba);
    assert!(matches!(volume_metric(&a, &b, &domain, 0, 1), Err(ReachError::ZeroSamples)));
}

#[test]
fn interval_gap() {
    let domain = [(0.0, 1.0)];
    let est = volume_metric(&BoxRegion(vec![(0.0, 0.75)]), &BoxRegion(vec![(0.0, 1.0)]), &domain, 100_000, 5).unwrap();
    assert!(within(&est, 0.25, 3.0), "{est:?}");
}

#[test]
fn triangle_inequality_on_random_boxes() {
    let domain = [(0.0, 1.0), (0.0, 1.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut random_box = || {
        BoxRegion(
            (0..2)
                .map(|_| {
                    let a: f64 = rng.random_range(0.0..0.7);
                    (a, a + rng.random_range(0.05..0.3))
                })
                .collect(),
        )
    };
    for trial in 0..20 {
        let (a, b, c) = (random_box(), random_box(), random_box());
        let ac = volume_metric(&a, &c, &domain, 20_000, trial).unwrap();
        let ab = volume_metric(&a, &b, &domain, 20_000, trial).unwrap();
        let bc = volume_metric(&b, &c, &domain, 20_000, trial).unwrap();
        let se = (ac.standard_error.powi(2) + ab.standard_error.powi(2) + bc.standard_error.powi(2)).sqrt();
        assert!(ac.value <= ab.value + bc.value + 3.0 * se, "trial {trial}");
    }
}

#[test]
fn estimates_are_reproducible() {
    let domain = [(-1.0, 1.0); 3];
    let ball = FunctionSublevel {
        function: |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>(),
        level: 1.0,
        strict: false,
    };
    let a = volume(&ball, &domain, 50_000, 77).unwrap();
    let b = volume(&ball, &domain, 50_000, 77).unwrap();
    assert_eq!(a, b);
    assert!(within(&a, 4.0 / 3.0 * std::f64::consts::PI, 3.0), "{a:?}");
}

#[test]
fn counterexample_gap_persists() {
    for d in [1, 2, 5, 10, 1000] {
        let (strict, loose) = counterexample_distances(d, 100_000, 13).unwrap();
        assert!(within(&strict, 0.25, 3.0), "d={d}: {strict:?}");
        assert_eq!(loose.value, 0.0, "d={d}");
    }
    assert!(counterexample::member(4, 0.5) <= counterexample::limit(0.5));
    assert_eq!(counterexample::member(4, 0.9), 0.75);
}

fn stationary() -> Problem {
    parse_problem(
        r#"{
            "states": ["x1", "x2"],
            "inputs": { "names": [] },
            "running_cost": "0",
            "terminal_cost": "x1^2 + x2^2 - 0.25",
            "dynamics": ["0", "0"],
            "omega_h": "4 - x1^2 - x2^2",
            "horizon_T": 1,
            "lambda_box": [[-1, 1], [-1, 1]],
            "weight": { "type": "dirac", "time": 0 },
            "degree": 2
        }"#,
    )
    .unwrap()
}

#[test]
fn stationary_outer_set_contains_target() {
    let p = stationary();
    for res in [
        backward_reach_outer(&p.spec, &p.config, &SolverSettings::default()).unwrap(),
        forward_reach_outer(&p.spec, &p.config, &SolverSettings::default()).unwrap(),
    ] {
        assert!(res.set.strict);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut checked = 0;
        while checked < 10_000 {
            let x = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let g = x[0] * x[0] + x[1] * x[1] - 0.25;
            if g >= 0.0 {
                continue;
            }
            assert!(res.set.value(&x) <= g + 1e-7);
            assert!(res.set.contains(&x), "{x:?}");
            checked += 1;
        }
    }
}

#[test]
fn running_cost_rejected() {
    let mut p = stationary();
    p.spec.running_cost = Polynomial::constant(p.spec.nvars(), 1.0);
    let err = backward_reach_outer(&p.spec, &p.config, &SolverSettings::default()).unwrap_err();
    assert!(matches!(err, ReachError::RunningCost));
}

#[test]
fn translation_flow_forward_set() {
    // x' = 1 carries (-0.1, 0.1) onto (0.4, 0.6) in half a time unit.
    let p = parse_problem(
        r#"{
            "states": ["x"],
            "inputs": { "names": [] },
            "running_cost": "0",
            "terminal_cost": "x^2 - 0.01",
            "dynamics": ["1"],
            "omega_h": "4 - x^2",
            "horizon_T": 0.5,
            "lambda_box": [[-1, 1]],
            "weight": { "type": "dirac", "time": 0 },
            "degree": 6
        }"#,
    )
    .unwrap();
    let res = forward_reach_outer(&p.spec, &p.config, &SolverSettings::default()).unwrap();
    for i in 1..200 {
        let x = 0.4 + 0.2 * i as f64 / 200.0;
        assert!(res.set.contains(&[x]), "{x}: {}", res.set.value(&[x]));
    }
}

#[test]
fn lorenz_problem_matches_preset() {
    let (spec, config) = lorenz_problem(LorenzParams::default(), 4);
    let ex4 = parse_problem(preset("ex4").unwrap()).unwrap();
    let reversed = spec.reversed();
    for (a, b) in reversed.dynamics.iter().zip(&ex4.spec.dynamics) {
        assert!((a - b).max_abs_coeff() < 1e-12);
    }
    assert!((&spec.terminal_cost - &ex4.spec.terminal_cost).max_abs_coeff() < 1e-12);
    assert!((&spec.omega.defining_poly - &ex4.spec.omega.defining_poly).max_abs_coeff() < 1e-12);
    assert_eq!(config.lambda_box, ex4.config.lambda_box);
    assert_eq!(config.weight, ex4.config.weight);
    assert_eq!(spec.horizon, ex4.spec.horizon);
}

#[test]
fn lorenz_field_against_unscaled_system() {
    // x = (y - (0, 0, 25)) / 50 and s = 50 t turn y' = F(y) into x' = F(y).
    let (spec, _) = lorenz_problem(LorenzParams::default(), 4);
    let (sigma, beta, rho) = (10.0, 8.0 / 3.0, 28.0);
    let y = [3.0, -7.0, 31.0];
    let x = [y[0] / 50.0, y[1] / 50.0, (y[2] - 25.0) / 50.0, 0.0];
    let big = [sigma * (y[1] - y[0]), y[0] * (rho - y[2]) - y[1], y[0] * y[1] - beta * y[2]];
    for (f, want) in spec.dynamics.iter().zip(big) {
        assert!((f.eval(&x) - want).abs() < 1e-9, "{} vs {want}", f.eval(&x));
    }
}

#[test]
fn ball_grid_stays_inside() {
    let pts = ball_grid(&[-0.6, 0.6, 0.2], 0.1, 20);
    assert_eq!(pts.len(), 8000);
    for p in &pts {
        let g = (p[0] + 0.6).powi(2) + (p[1] - 0.6).powi(2) + (p[2] - 0.2).powi(2) - 0.01;
        assert!(g < 0.0);
    }
}

#[test]
fn empty_sublevel_sets_coincide() {
    let ex1 = parse_problem(preset("ex1").unwrap()).unwrap();
    let study = sublevel_convergence_study(
        &ex1.spec,
        &ex1.config,
        &[4],
        -10.0,
        0.0,
        Some(&Ex1Oracle::default()),
        20_000,
        4,
        &crate::hjb::SweepOptions::default(),
    )
    .unwrap();
    let row = &study.rows[0];
    assert_eq!(row.distance.unwrap().value, 0.0);
    assert_eq!(row.strict_distance.unwrap().value, 0.0);
}

#[test]
fn ex1_sublevel_sets_converge() {
    let ex1 = parse_problem(preset("ex1").unwrap()).unwrap();
    let study = sublevel_convergence_study(
        &ex1.spec,
        &ex1.config,
        &[4, 6, 8],
        0.0,
        0.0,
        Some(&Ex1Oracle::default()),
        100_000,
        8,
        &crate::hjb::SweepOptions::default(),
    )
    .unwrap();
    let dv: Vec<VolumeEstimate> = study.rows.iter().map(|r| r.distance.unwrap()).collect();
    for w in dv.windows(2) {
        let se = (w[0].standard_error.powi(2) + w[1].standard_error.powi(2)).sqrt();
        assert!(w[1].value <= w[0].value + 2.0 * se, "{}", study.to_csv());
    }
    assert!(study.to_csv().starts_with("degree,status,dv,dv_se,dv_strict,dv_strict_se\n4,optimal,"));
    assert_eq!(study.reference, "ex1-analytic");
}

#[test]
fn exports() {
    let set = SublevelSet {
        polynomial: crate::poly::parse_poly("x^2 + y^2 - 1", &["x", "y", "t"]).unwrap(),
        n_states: 2,
        time: 0.0,
        level: 0.0,
        domain: vec![(-2.0, 2.0), (-2.0, 2.0)],
        strict: false,
    };
    let csv = point_cloud_csv(&["x", "y"], &[vec![0.0, 0.0], vec![1.5, 0.0]], &set);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x,y,inside");
    assert!(lines[1].ends_with(",1") && lines[2].ends_with(",0"));

    let field = scalar_field_csv(&["x", "y"], &set, 5);
    let lines: Vec<&str> = field.lines().collect();
    assert_eq!(lines.len(), 26);
    assert_eq!(lines[0], "x,y,value");
    let first: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![-2.0, -2.0, 7.0]);
    let second: Vec<f64> = lines[2].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(second[..2], [-1.0, -2.0]);
}
