//! Independent re-derivation of a certificate from the problem data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HjbError, ScaledProblem, SubValueCertificate};
use crate::model::{OcpSpec, SynthesisConfig};
use crate::sos::{gram_expand, min_eig, ConstraintCheck};
use crate::Polynomial;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub constraints: Vec<ConstraintCheck>,
    pub min_eigenvalue: f64,
    /// Largest identity residual relative to `1 + ||target||`.
    pub max_relative_identity_residual: f64,
    /// Gap between the stored original-coordinate `P` and the mapped-back
    /// scaled polynomial, relative to its largest coefficient.
    pub mapping_residual: f64,
    /// Smallest sampled `dP/dt + c + grad_x P . f` over `Omega x U x [0, T]`.
    pub sampled_dissipation_min: f64,
    /// Smallest sampled `g(x) - P(x, T)` over `Omega`.
    pub sampled_boundary_min: f64,
    pub samples: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Uniform samples of `Omega` (rejection from its bounding box) with
/// admissible inputs and times in `[0, T]`.
pub(crate) fn sample_domain(
    spec: &OcpSpec,
    center: &[f64],
    count: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let bounds = spec.omega_bounds(center);
    let input_bounds = spec.input_bounds();
    let n = spec.n_states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < 1000 * count.max(1) {
        attempts += 1;
        let mut z = vec![0.0; spec.nvars()];
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            z[i] = rng.random_range(lo..=hi);
        }
        if !spec.omega.contains(&z) {
            continue;
        }
        for (j, &(lo, hi)) in input_bounds.iter().enumerate() {
            z[n + j] = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        }
        if !spec.input_admissible(&z[n..n + input_bounds.len()], 0.0) {
            continue;
        }
        z[spec.time_index()] = rng.random_range(0.0..=spec.horizon);
        out.push(z);
    }
    out
}

/// Checks Gram positivity, the Putinar identities rebuilt from the problem
/// data, and the sampled pointwise inequalities.
pub fn verify_certificate(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    cert: &SubValueCertificate,
    tol: f64,
    samples: usize,
    seed: u64,
) -> Result<VerificationReport, HjbError> {
    let scaled = ScaledProblem::new(spec, config)?;
    let nvars = spec.nvars();
    let map_gap = scaled
        .map
        .scale
        .iter()
        .chain(&scaled.map.offset)
        .zip(cert.scaling.scale.iter().chain(&cert.scaling.offset))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if cert.scaling.scale.len() != nvars || map_gap > 1e-12 {
        return Err(HjbError::Certificate("scaling does not match the problem".into()));
    }
    let p_scaled = cert.scaled_polynomial(spec)?;
    let p = cert.polynomial(spec)?;
    let back = scaled.map.to_original(&p_scaled)?;
    let mapping_residual = (&back - &p).max_abs_coeff() / (1.0 + p.max_abs_coeff());

    let margin = config.strict_margin;
    let targets = [
        ("k0", scaled.boundary(&p_scaled).add_constant(-margin), scaled.boundary_domains()),
        ("k1", scaled.dissipation(&p_scaled).add_constant(-margin), scaled.dissipation_domains()),
    ];
    let mut checks = Vec::new();
    let mut min_eigenvalue = f64::INFINITY;
    let mut max_rel = 0.0f64;
    for (label, target, domains) in targets {
        let rec = cert
            .constraints
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| HjbError::Certificate(format!("missing constraint {label}")))?;
        if rec.multipliers.len() != domains.len() {
            return Err(HjbError::Certificate(format!("{label}: multiplier count")));
        }
        let mut diff = target.clone();
        let mut eig = f64::INFINITY;
        for (m, (dl, h)) in rec.multipliers.iter().zip(&domains) {
            if &m.label != dl {
                return Err(HjbError::Certificate(format!("{label}: multiplier `{}` for `{dl}`", m.label)));
            }
            let q = m.matrix()?;
            eig = eig.min(min_eig(&q));
            diff = &diff - &(&gram_expand(&m.monomials(), nvars, &q) * h);
        }
        let q = rec.residual.matrix()?;
        eig = eig.min(min_eig(&q));
        diff = &diff - &gram_expand(&rec.residual.monomials(), nvars, &q);
        let check = ConstraintCheck {
            label: label.to_string(),
            min_eigenvalue: eig,
            identity_residual: diff.max_abs_coeff(),
            target_norm: target.max_abs_coeff(),
        };
        min_eigenvalue = min_eigenvalue.min(eig);
        max_rel = max_rel.max(check.identity_residual / (1.0 + check.target_norm));
        checks.push(check);
    }

    // Pointwise restatement in the original coordinates.
    let n = spec.n_states();
    let time = spec.time_index();
    let dt = p.differentiate(time);
    let grad: Vec<Polynomial> = (0..n).map(|i| p.differentiate(i)).collect();
    let p_end = p.fix_var(time, spec.horizon);
    let points = sample_domain(spec, &config.lambda_center(), samples, seed);
    let mut diss = f64::INFINITY;
    let mut bnd = f64::INFINITY;
    for z in &points {
        let mut v = dt.eval(z) + spec.running_cost.eval(z);
        for (gi, fi) in grad.iter().zip(&spec.dynamics) {
            v += gi.eval(z) * fi.eval(z);
        }
        diss = diss.min(v);
        bnd = bnd.min(spec.terminal_cost.eval(z) - p_end.eval(z));
    }
    let passed = min_eigenvalue >= -tol && max_rel <= tol && diss >= -tol && bnd >= -tol && mapping_residual <= tol;
    Ok(VerificationReport {
        constraints: checks,
        min_eigenvalue,
        max_relative_identity_residual: max_rel,
        mapping_residual,
        sampled_dissipation_min: diss,
        sampled_boundary_min: bnd,
        samples: points.len(),
        tol,
        passed,
    })
}
