//! Infeasible-start primal-dual path following with the HKM direction.
//!
//! Independent of the self-dual solver apart from presolve; used as a
//! cross-check backend.

use nalgebra::{DMatrix, DVector};

use super::hsd::{dot, dual_ray, infeasible_from_presolve, primal_ray, Candidate, Data};
use super::linalg::{add_schur_block, max_step_general, robust_cholesky, symmetrize, SchurFactor};
use super::presolve::{presolve, PresolveOutcome};
use super::{SdpBackend, SdpError, SdpProblem, SdpSolution, SolveStatus, SolverSettings};

const STEP_FACTOR: f64 = 0.98;

#[derive(Clone, Copy, Debug, Default)]
pub struct HkmBackend;

impl SdpBackend for HkmBackend {
    fn name(&self) -> &str {
        "hkm"
    }

    fn solve(
        &self,
        problem: &SdpProblem,
        settings: &SolverSettings,
    ) -> Result<SdpSolution, SdpError> {
        problem.validate()?;
        Ok(solve_hkm(problem, settings))
    }
}

fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = robust_cholesky(a)?;
    let linv = l.try_inverse()?;
    Some(symmetrize(linv.transpose() * linv))
}

fn solve_hkm(problem: &SdpProblem, settings: &SolverSettings) -> SdpSolution {
    let pre = match presolve(problem) {
        PresolveOutcome::Ready(p) => p,
        PresolveOutcome::Infeasible(ray) => return infeasible_from_presolve(problem, ray),
    };
    let d = Data::new(&pre.problem);
    let nu = d.nu().max(1.0);
    let sizes = &pre.problem.block_sizes;
    let mut x: Vec<DMatrix<f64>> = sizes.iter().map(|&n| DMatrix::identity(n, n)).collect();
    let mut z = x.clone();
    let mut xf = DVector::zeros(pre.problem.n_free);
    let mut y = DVector::zeros(d.m);
    let mut log = Vec::new();
    let mut iter = 0;
    loop {
        let mu = dot(&x, &z) / nu;
        let cand = Candidate::from_scaled(problem, &pre, &x, xf.as_slice(), y.as_slice(), &z);
        log.push(cand.record(iter, mu));
        if cand.converged(settings) {
            return cand.finish(SolveStatus::Optimal, None, iter, log);
        }
        if let Some(ray) = primal_ray(problem, &pre, y.as_slice(), settings.tol_infeas) {
            return cand.finish(SolveStatus::PrimalInfeasible, Some(ray), iter, log);
        }
        if let Some(ray) = dual_ray(problem, &pre, &x, xf.as_slice(), settings.tol_infeas) {
            return cand.finish(SolveStatus::DualInfeasible, Some(ray), iter, log);
        }
        if iter >= settings.max_iter {
            return cand.finish(SolveStatus::MaxIter, None, iter, log);
        }

        let zinv: Option<Vec<DMatrix<f64>>> = z.iter().map(inverse_spd).collect();
        let Some(zinv) = zinv else {
            return cand.finish(SolveStatus::NumericalFailure, None, iter, log);
        };
        let mut m = DMatrix::zeros(d.m, d.m);
        for ((blk, xb), zi) in d.blocks.iter().zip(&x).zip(&zinv) {
            add_schur_block(&mut m, blk, xb, zi);
        }
        let Some(factor) = SchurFactor::new(symmetrize(m), &d.af) else {
            return cand.finish(SolveStatus::NumericalFailure, None, iter, log);
        };

        let rp = &d.b - d.apply(&x) - &d.af * &xf;
        let aty = d.adjoint(&y);
        let rd: Vec<DMatrix<f64>> =
            d.c.iter()
                .zip(&aty)
                .zip(&z)
                .map(|((c, a), z)| c - a - z)
                .collect();
        let rdf = &d.cf - d.af.transpose() * &y;

        // Solves for the direction given the complementarity target `k`
        // (dX = k - X dZ Z^{-1}).
        let direction = |k: &[DMatrix<f64>]| {
            let base: Vec<DMatrix<f64>> = k
                .iter()
                .zip(&x)
                .zip(&rd)
                .zip(&zinv)
                .map(|(((k, x), rd), zi)| k - x * rd * zi)
                .collect();
            let r1 = &rp - d.apply(&base);
            let (dy, dxf) = factor.solve(&r1, &rdf);
            let at = d.adjoint(&dy);
            let dz: Vec<DMatrix<f64>> = rd.iter().zip(&at).map(|(rd, a)| rd - a).collect();
            let dx: Vec<DMatrix<f64>> = k
                .iter()
                .zip(&x)
                .zip(&dz)
                .zip(&zinv)
                .map(|(((k, x), dz), zi)| symmetrize(k - x * dz * zi))
                .collect();
            (dx, dxf, dy, dz)
        };
        let steps = |dx: &[DMatrix<f64>], dz: &[DMatrix<f64>]| {
            let mut ap: f64 = 1.0 / STEP_FACTOR;
            let mut ad: f64 = 1.0 / STEP_FACTOR;
            for (xb, d) in x.iter().zip(dx) {
                ap = max_step_general(xb, d, ap);
            }
            for (zb, d) in z.iter().zip(dz) {
                ad = max_step_general(zb, d, ad);
            }
            ((STEP_FACTOR * ap).min(1.0), (STEP_FACTOR * ad).min(1.0))
        };

        let k_aff: Vec<DMatrix<f64>> = x.iter().map(|x| -x).collect();
        let (dxa, _, _, dza) = direction(&k_aff);
        let (ap, ad) = steps(&dxa, &dza);
        let mu_aff: f64 = x
            .iter()
            .zip(&dxa)
            .zip(z.iter().zip(&dza))
            .map(|((x, dx), (z, dz))| (x + dx * ap).dot(&(z + dz * ad)))
            .sum::<f64>()
            / nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let k: Vec<DMatrix<f64>> = zinv
            .iter()
            .zip(&x)
            .zip(dxa.iter().zip(&dza))
            .map(|((zi, x), (dx, dz))| zi * (sigma * mu) - x - dx * dz * zi)
            .collect();
        let (dx, dxf, dy, dz) = direction(&k);
        let (ap, ad) = steps(&dx, &dz);
        if !(ap.is_finite() && ad.is_finite()) || ap.max(ad) < 1e-12 {
            return cand.finish(SolveStatus::NumericalFailure, None, iter, log);
        }
        for (xb, d) in x.iter_mut().zip(&dx) {
            *xb += d * ap;
        }
        xf += dxf * ap;
        for (zb, d) in z.iter_mut().zip(&dz) {
            *zb += d * ad;
        }
        y += dy * ad;
        iter += 1;
    }
}
