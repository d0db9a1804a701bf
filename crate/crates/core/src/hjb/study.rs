//! Degree sweeps, L1 errors against an oracle and HJB residual fields.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{synthesize, HjbError, SubValueCertificate};
use crate::model::{InputSet, OcpSpec, SynthesisConfig, Weight};
use crate::sdp::SolverSettings;
use crate::sim::{input_grid, ValueOracle};
use crate::Polynomial;

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub settings: SolverSettings,
    /// Midpoint-rule points per axis for the L1 error.
    pub l1_points_per_axis: usize,
    /// Solve the degrees concurrently.
    pub parallel: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            settings: SolverSettings::default(),
            l1_points_per_axis: 200,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DegreeRecord {
    pub degree: u32,
    pub status: String,
    pub objective: Option<f64>,
    pub l1_error: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub certificate: Option<SubValueCertificate>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub records: Vec<DegreeRecord>,
}

impl ConvergenceStudy {
    /// Objective is nondecreasing over the successful solves, up to
    /// `rel_tol * (1 + |objective|)`.
    pub fn objective_monotone(&self, rel_tol: f64) -> bool {
        let objs: Vec<f64> = self.records.iter().filter_map(|r| r.objective).collect();
        objs.windows(2).all(|w| w[1] >= w[0] - rel_tol * (1.0 + w[0].abs()))
    }

    /// `degree,status,objective,l1_error` table; wall times are left out so
    /// reruns produce identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("degree,status,objective,l1_error\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.degree,
                r.status,
                opt(r.objective),
                opt(r.l1_error)
            ));
        }
        out
    }
}

fn status_name(e: &HjbError) -> &'static str {
    match e {
        HjbError::DegreeTooLow { .. } => "degree_too_low",
        HjbError::Infeasible { .. } => "infeasible",
        HjbError::NotConverged { .. } => "not_converged",
        _ => "error",
    }
}

/// One synthesis per degree; failures are recorded and the sweep continues.
pub fn degree_sweep(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    degrees: &[u32],
    oracle: Option<&dyn ValueOracle>,
    opts: &SweepOptions,
) -> ConvergenceStudy {
    let run = |&d: &u32| {
        let start = Instant::now();
        let mut cfg = config.clone();
        cfg.degree = d;
        // explicit multiplier degrees belong to one degree only
        cfg.boundary_multipliers = None;
        cfg.dissipation_multipliers = None;
        let res = synthesize(spec, &cfg, &opts.settings);
        let wall = start.elapsed().as_secs_f64();
        match res {
            Ok(s) => {
                let l1 = oracle.and_then(|o| {
                    let p = s.certificate.polynomial(spec).ok()?;
                    Some(l1_error(spec, &cfg, &p, o, opts.l1_points_per_axis))
                });
                DegreeRecord {
                    degree: d,
                    status: "optimal".into(),
                    objective: Some(s.certificate.objective_value),
                    l1_error: l1,
                    wall_time_s: wall,
                    error: None,
                    certificate: Some(s.certificate),
                }
            }
            Err(e) => DegreeRecord {
                degree: d,
                status: status_name(&e).into(),
                objective: None,
                l1_error: None,
                wall_time_s: wall,
                error: Some(e.to_string()),
                certificate: None,
            },
        }
    };
    let records = if opts.parallel {
        degrees.par_iter().map(run).collect()
    } else {
        degrees.iter().map(run).collect()
    };
    ConvergenceStudy { records }
}

/// Weighted L1 distance between `p` and the oracle over `Lambda x [0, T]`
/// by the midpoint rule with `k` points per axis.
pub fn l1_error(spec: &OcpSpec, config: &SynthesisConfig, p: &Polynomial, oracle: &dyn ValueOracle, k: usize) -> f64 {
    let n = spec.n_states();
    let time = spec.time_index();
    let mut axes: Vec<(f64, f64)> = config.lambda_box.clone();
    let fixed_t = match config.weight {
        Weight::Uniform => {
            axes.push((0.0, spec.horizon));
            None
        }
        Weight::Dirac { time } => Some(time),
    };
    let cell: f64 = axes.iter().map(|(a, b)| (b - a) / k as f64).product();
    let total = k.pow(axes.len() as u32);
    let sum: f64 = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut z = vec![0.0; spec.nvars()];
            let mut x = vec![0.0; n];
            for (a, &(lo, hi)) in axes.iter().enumerate() {
                let i = idx % k;
                idx /= k;
                let v = lo + (hi - lo) * (i as f64 + 0.5) / k as f64;
                if a < n {
                    x[a] = v;
                    z[a] = v;
                } else {
                    z[time] = v;
                }
            }
            if let Some(s) = fixed_t {
                z[time] = s;
            }
            (p.eval(&z) - oracle.value(&x, z[time])).abs()
        })
        .sum();
    sum * cell
}

/// HJB residual `dV/dt + min_u (c + grad_x V . f)` at sampled points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualField {
    /// `(x, t)` points.
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub min: f64,
    /// True when the inner minimum was computed in closed form.
    pub closed_form: bool,
}

/// Residual of a polynomial `p` over `(x, u, t)`; see [`hjb_residual_with`].
pub fn hjb_residual(p: &Polynomial, spec: &OcpSpec, points: &[Vec<f64>]) -> Result<ResidualField, HjbError> {
    let n = spec.n_states();
    let time = spec.time_index();
    let dt = p.differentiate(time);
    let grad: Vec<Polynomial> = (0..n).map(|i| p.differentiate(i)).collect();
    hjb_residual_with(spec, points, |x, t| {
        let mut z = vec![0.0; spec.nvars()];
        z[..n].copy_from_slice(x);
        z[time] = t;
        (dt.eval(&z), grad.iter().map(|g| g.eval(&z)).collect())
    })
}

/// Evaluates `dV/dt + min_u (c + grad_x V . f)` at `(x, t)` points given
/// `derivatives(x, t) = (dV/dt, grad_x V)`. The inner minimum is closed-form
/// when `c` and `f` are affine in the inputs and `U` is a box, and taken on a
/// 101-point-per-input grid otherwise.
pub fn hjb_residual_with<D>(spec: &OcpSpec, points: &[Vec<f64>], derivatives: D) -> Result<ResidualField, HjbError>
where
    D: Fn(&[f64], f64) -> (f64, Vec<f64>) + Sync,
{
    let n = spec.n_states();
    let m = spec.m_inputs();
    let time = spec.time_index();
    let input_vars = spec.registry.input_vars();
    let affine = std::iter::once(&spec.running_cost)
        .chain(&spec.dynamics)
        .all(|p| p.degree_in(&input_vars) <= 1);
    let closed_form = affine && matches!(spec.inputs, InputSet::Box(_) | InputSet::Empty);
    let grid = if closed_form {
        Vec::new()
    } else {
        input_grid(spec, 101).map_err(|e| HjbError::Certificate(e.to_string()))?
    };
    let at_zero = |p: &Polynomial| input_vars.iter().fold(p.clone(), |q, &v| q.fix_var(v, 0.0));
    let c0 = at_zero(&spec.running_cost);
    let f0: Vec<Polynomial> = spec.dynamics.iter().map(at_zero).collect();
    let cu: Vec<Polynomial> = input_vars.iter().map(|&v| spec.running_cost.differentiate(v)).collect();
    let fu: Vec<Vec<Polynomial>> = input_vars
        .iter()
        .map(|&v| spec.dynamics.iter().map(|f| f.differentiate(v)).collect())
        .collect();
    let bounds = spec.input_bounds();
    let values: Vec<f64> = points
        .par_iter()
        .map(|pt| {
            let (x, t) = (&pt[..n], pt[n]);
            let (dt, grad) = derivatives(x, t);
            let mut z = vec![0.0; spec.nvars()];
            z[..n].copy_from_slice(x);
            z[time] = t;
            let dot = |f: &[Polynomial], z: &[f64]| -> f64 { f.iter().zip(&grad).map(|(fi, g)| fi.eval(z) * g).sum() };
            let inner = if closed_form {
                let mut v = c0.eval(&z) + dot(&f0, &z);
                for ((cj, fj), &(lo, hi)) in cu.iter().zip(&fu).zip(&bounds) {
                    let s = cj.eval(&z) + dot(fj, &z);
                    v += (s * lo).min(s * hi);
                }
                v
            } else {
                grid.iter()
                    .map(|u| {
                        z[n..n + m].copy_from_slice(u);
                        spec.running_cost.eval(&z) + dot(&spec.dynamics, &z)
                    })
                    .fold(f64::INFINITY, f64::min)
            };
            dt + inner
        })
        .collect();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ResidualField {
        points: points.to_vec(),
        values,
        min,
        closed_form,
    })
}
