//! Linear conic programs over products of PSD cones and free variables.
//!
//! The default solver is a homogeneous self-dual interior-point method with
//! Nesterov-Todd scaling and a Mehrotra predictor-corrector. A second,
//! independent path-following backend (HKM direction) is available through
//! [`solve_with_backend`] for cross-checks.

mod hkm;
mod hsd;
mod linalg;
mod presolve;
mod problem;
mod sdpa;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hkm::HkmBackend;
pub use problem::{smat, svec, SdpBuilder, SdpProblem, SymEntry};
pub use sdpa::write_sdpa;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed SDP: {0}")]
    Malformed(String),
    #[error("backend `{0}` is unavailable")]
    BackendUnavailable(String),
    #[error("backend `{backend}` violated the solution contract: {reason}")]
    ContractViolation { backend: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative primal and dual feasibility tolerance.
    pub tol_feas: f64,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Tolerance for accepting an infeasibility ray.
    pub tol_infeas: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_infeas: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIter,
    NumericalFailure,
}

/// Certificate returned with an infeasible status.
#[derive(Clone, Debug)]
pub enum InfeasibilityRay {
    /// `y` with `b.y = 1`, `-A^T y` in the dual cone and `A_f^T y = 0`.
    Primal { y: Vec<f64> },
    /// `(X, x_f)` with `c.x = -1`, `A x = 0` and `X` PSD.
    Dual {
        blocks: Vec<DMatrix<f64>>,
        free: Vec<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub mu: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SolveStatus,
    pub blocks: Vec<DMatrix<f64>>,
    pub free: Vec<f64>,
    pub y: Vec<f64>,
    pub dual_blocks: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub ray: Option<InfeasibilityRay>,
    pub log: Vec<IterationRecord>,
}

impl SdpSolution {
    /// Writes the iteration log as CSV.
    pub fn log_csv(&self) -> String {
        let mut out = String::from("iter,mu,primal_res,dual_res,gap\n");
        for r in &self.log {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e}\n",
                r.iter, r.mu, r.primal_res, r.dual_res, r.gap
            ));
        }
        out
    }
}

/// Relative KKT residuals `(primal, dual, gap)` and objectives of a point.
#[derive(Clone, Copy, Debug)]
pub struct KktReport {
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
    pub primal_objective: f64,
    pub dual_objective: f64,
}

pub fn kkt_residuals(
    problem: &SdpProblem,
    blocks: &[DMatrix<f64>],
    free: &[f64],
    y: &[f64],
    dual_blocks: &[DMatrix<f64>],
) -> KktReport {
    let ax = problem.apply(blocks, free);
    let b_norm = inf_norm(&problem.rhs);
    let pres = ax
        .iter()
        .zip(&problem.rhs)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / (1.0 + b_norm);
    let (aty, atf) = problem.apply_adjoint(y);
    let cb = problem.objective_blocks();
    let c_norm = cb
        .iter()
        .map(|c| c.amax())
        .chain(problem.free_objective.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let mut dres: f64 = 0.0;
    for ((a, z), c) in aty.iter().zip(dual_blocks).zip(&cb) {
        if a.nrows() > 0 {
            dres = dres.max((a + z - c).amax());
        }
    }
    for (a, c) in atf.iter().zip(&problem.free_objective) {
        dres = dres.max((a - c).abs());
    }
    let dres = dres / (1.0 + c_norm);
    let p = problem.primal_objective(blocks, free);
    let d = problem.dual_objective(y);
    KktReport {
        primal_res: pres,
        dual_res: dres,
        gap: (p - d).abs() / (1.0 + p.abs() + d.abs()),
        primal_objective: p,
        dual_objective: d,
    }
}

/// Checks an infeasibility ray against the original data; returns the
/// largest violation.
pub fn ray_violation(problem: &SdpProblem, ray: &InfeasibilityRay) -> f64 {
    match ray {
        InfeasibilityRay::Primal { y } => {
            let by = problem.dual_objective(y);
            let (aty, atf) = problem.apply_adjoint(y);
            let mut v = (by - 1.0).abs();
            for a in &aty {
                let neg = -a;
                v = v.max((-linalg::min_eigenvalue(&neg)).max(0.0));
            }
            for a in &atf {
                v = v.max(a.abs());
            }
            v
        }
        InfeasibilityRay::Dual { blocks, free } => {
            let cx = problem.primal_objective(blocks, free);
            let mut v = (cx + 1.0).abs();
            for a in problem.apply(blocks, free) {
                v = v.max(a.abs());
            }
            for x in blocks {
                v = v.max((-linalg::min_eigenvalue(x)).max(0.0));
            }
            v
        }
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Solves `problem` with the built-in homogeneous self-dual method.
pub fn solve(problem: &SdpProblem, settings: &SolverSettings) -> Result<SdpSolution, SdpError> {
    problem.validate()?;
    Ok(hsd::solve_hsd(problem, settings))
}

/// An SDP solver that can be plugged in behind [`solve_with_backend`].
pub trait SdpBackend: Sync {
    fn name(&self) -> &str;

    fn available(&self) -> bool {
        true
    }

    fn solve(
        &self,
        problem: &SdpProblem,
        settings: &SolverSettings,
    ) -> Result<SdpSolution, SdpError>;
}

/// The default homogeneous self-dual solver as a backend.
#[derive(Clone, Copy, Debug, Default)]
pub struct HsdBackend;

impl SdpBackend for HsdBackend {
    fn name(&self) -> &str {
        "hsd-nt"
    }

    fn solve(
        &self,
        problem: &SdpProblem,
        settings: &SolverSettings,
    ) -> Result<SdpSolution, SdpError> {
        solve(problem, settings)
    }
}

/// Runs `backend` and re-checks its claims against the problem data.
pub fn solve_with_backend(
    problem: &SdpProblem,
    backend: &dyn SdpBackend,
    settings: &SolverSettings,
) -> Result<SdpSolution, SdpError> {
    if !backend.available() {
        return Err(SdpError::BackendUnavailable(backend.name().to_string()));
    }
    problem.validate()?;
    let sol = backend.solve(problem, settings)?;
    let violation = |reason: String| SdpError::ContractViolation {
        backend: backend.name().to_string(),
        reason,
    };
    match sol.status {
        SolveStatus::Optimal => {
            let k = kkt_residuals(problem, &sol.blocks, &sol.free, &sol.y, &sol.dual_blocks);
            if k.primal_res > settings.tol_feas
                || k.dual_res > settings.tol_feas
                || k.gap > settings.tol_gap
            {
                return Err(violation(format!(
                    "claimed optimal with residuals {:e}/{:e}/{:e}",
                    k.primal_res, k.dual_res, k.gap
                )));
            }
            for (b, (x, z)) in sol.blocks.iter().zip(&sol.dual_blocks).enumerate() {
                let scale = 1.0 + x.amax().max(z.amax());
                if linalg::min_eigenvalue(x) < -settings.tol_feas * scale
                    || linalg::min_eigenvalue(z) < -settings.tol_feas * scale
                {
                    return Err(violation(format!("block {b} left the cone")));
                }
            }
        }
        SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible => {
            let Some(ray) = &sol.ray else {
                return Err(violation("infeasible status without a ray".into()));
            };
            let v = ray_violation(problem, ray);
            if v > settings.tol_infeas.max(1e-6) {
                return Err(violation(format!("infeasibility ray violated by {v:e}")));
            }
        }
        SolveStatus::MaxIter | SolveStatus::NumericalFailure => {}
    }
    Ok(sol)
}
