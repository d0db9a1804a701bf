use nalgebra::DMatrix;
use proptest::prelude::*;

use super::*;
use crate::poly::parse_poly;
use crate::sdp::{ray_violation, solve, SdpBuilder, SolveStatus, SolverSettings};

fn p(text: &str, names: &[&str]) -> Polynomial {
    parse_poly(text, names).unwrap()
}

fn feasibility(
    target: Polynomial,
    domains: &[(&str, Polynomial)],
) -> (
    SosConstraint,
    crate::sdp::SdpSolution,
    crate::sdp::SdpProblem,
) {
    let mut b = SdpBuilder::new();
    let doms: Vec<(String, Polynomial)> = domains
        .iter()
        .map(|(l, h)| (l.to_string(), h.clone()))
        .collect();
    let c = compile_putinar(
        &mut b,
        "t",
        &AffinePoly::constant(target),
        &doms,
        &PutinarDegrees::default(),
    )
    .unwrap();
    let prob = b.build();
    let sol = solve(&prob, &SolverSettings::default()).unwrap();
    (c, sol, prob)
}

#[test]
fn perfect_square_is_sos() {
    let (c, sol, _) = feasibility(p("x^2 + 2*x + 1", &["x"]), &[]);
    assert_eq!(sol.status, SolveStatus::Optimal);
    let chk = c.check(&sol.free, &sol.blocks);
    assert!(chk.identity_residual < 1e-7);
    assert!(chk.min_eigenvalue > -1e-8);
}

#[test]
fn hand_gram_for_square() {
    // (x + 1)^2 = [1 x] [[1 1] [1 1]] [1 x]^T
    let basis = MonomialBasis::over(&[0], 1);
    let q = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    assert_eq!(gram_polynomial(&basis, 1, &q), p("x^2 + 2*x + 1", &["x"]));
    assert!(min_eig(&q) > -1e-12);
}

#[test]
fn negative_constant_is_not_sos() {
    let (_, sol, prob) = feasibility(p("x^2 - 1", &["x"]), &[]);
    assert_eq!(sol.status, SolveStatus::PrimalInfeasible);
    assert!(ray_violation(&prob, sol.ray.as_ref().unwrap()) < 1e-8);
}

#[test]
fn motzkin_is_not_sos() {
    let m = p("x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1", &["x", "y"]);
    // nonnegative: spot check the AM-GM minimum
    assert!(m.eval(&[1.0, 1.0]).abs() < 1e-12);
    let (_, sol, prob) = feasibility(m, &[]);
    assert_eq!(
        sol.status,
        SolveStatus::PrimalInfeasible,
        "{:?}",
        sol.log.last()
    );
    assert!(ray_violation(&prob, sol.ray.as_ref().unwrap()) < 1e-8);
}

#[test]
fn domain_itself_with_unit_multiplier() {
    let h = p("1 - x^2", &["x"]);
    let mut b = SdpBuilder::new();
    let c = compile_putinar(
        &mut b,
        "t",
        &AffinePoly::constant(h.clone()),
        &[("h".into(), h.clone())],
        &PutinarDegrees {
            min_degree: 0,
            multipliers: Some(vec![0]),
        },
    )
    .unwrap();
    assert_eq!(c.multipliers[0].gram.basis.len(), 1);
    let sol = solve(&b.build(), &SolverSettings::default()).unwrap();
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(c.check(&sol.free, &sol.blocks).identity_residual < 1e-7);
    // the hand certificate s = 1, sigma_0 = 0 is valid too
    let blocks = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::zeros(2, 2)];
    let chk = c.check(&[], &blocks);
    assert!(chk.identity_residual < 1e-15);
}

#[test]
fn nonnegative_on_half_line() {
    let x = p("x", &["x"]);
    let (c, sol, _) = feasibility(x.clone(), &[("h", x)]);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert_eq!(c.multipliers[0].gram.basis.len(), 1);
    assert!(c.check(&sol.free, &sol.blocks).identity_residual < 1e-7);
}

#[test]
fn corrupted_gram_is_flagged() {
    let (c, sol, _) = feasibility(p("x^2 + 2*x + 1", &["x"]), &[]);
    let mut blocks = sol.blocks.clone();
    blocks[0][(0, 1)] += 0.01;
    blocks[0][(1, 0)] += 0.01;
    assert!(c.check(&sol.free, &blocks).identity_residual > 1e-3);
}

#[test]
fn oversized_multiplier_rejected() {
    let mut b = SdpBuilder::new();
    let err = compile_putinar(
        &mut b,
        "t",
        &AffinePoly::constant(p("x", &["x"])),
        &[("h".into(), p("1 - x^2", &["x"]))],
        &PutinarDegrees {
            min_degree: 0,
            multipliers: Some(vec![2]),
        },
    )
    .unwrap_err();
    assert!(matches!(err, SosError::DegreeBookkeeping { .. }));
}

#[test]
fn row_count_is_full_basis_at_matched_degree() {
    // three variables, target degree 4: rows are all monomials of degree <= 4
    let t = p("x^4 + y^2*z^2 + 1", &["x", "y", "z"]);
    let mut b = SdpBuilder::new();
    let c = compile_putinar(
        &mut b,
        "t",
        &AffinePoly::constant(t),
        &[("h".into(), p("1 - x^2 - y^2 - z^2", &["x", "y", "z"]))],
        &PutinarDegrees::default(),
    )
    .unwrap();
    let brute = (0..=4u32)
        .flat_map(|a| (0..=4u32).flat_map(move |b| (0..=4u32).map(move |c| (a, b, c))))
        .filter(|(a, b, c)| a + b + c <= 4)
        .count();
    assert_eq!(c.rows.len(), brute);
    assert_eq!(b.n_rows(), 35);
    // rows come out in graded-lex order
    assert!(c.rows.windows(2).all(|w| w[0].0 < w[1].0));
}

#[test]
fn matched_degree_rounds_up_to_even() {
    assert_eq!(matched_degree(3, 0), 4);
    assert_eq!(matched_degree(2, 3), 4);
    assert_eq!(matched_degree(4, 4), 4);
    assert_eq!(default_multiplier_degree(4, 2), Some(2));
    assert_eq!(default_multiplier_degree(4, 1), Some(2));
    assert_eq!(default_multiplier_degree(1, 2), None);
}

proptest! {
    #[test]
    fn gram_map_matches_expansion(seed in proptest::collection::vec(-1.0f64..1.0, 36)) {
        // random PSD Q = L L^T over the degree-2 basis in two variables (6 monomials)
        let l = DMatrix::from_column_slice(6, 6, &seed);
        let q = &l * l.transpose();
        let basis = MonomialBasis::over(&[0, 1], 2);
        let poly = gram_polynomial(&basis, 2, &q);
        for (m, pairs) in gram_map(&basis) {
            let v: f64 = pairs.iter().map(|&(a, b)| if a == b { q[(a, a)] } else { 2.0 * q[(a, b)] }).sum();
            prop_assert!((v - poly.coeff(&m)).abs() < 1e-12);
        }
    }
}
