//! Realized cost, loss and the Sobolev-distance performance bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FastPoly, SimError, Trajectory};
use crate::model::OcpSpec;
use crate::Polynomial;

/// Left Riemann sum of the running cost over the trajectory nodes plus the
/// terminal cost at the final state.
pub fn cost(spec: &OcpSpec, traj: &Trajectory) -> f64 {
    let c = FastPoly::new(&spec.running_cost);
    let g = FastPoly::new(&spec.terminal_cost);
    let mut z = vec![0.0; spec.nvars()];
    let n = spec.n_states();
    let m = spec.m_inputs();
    let mut sum = 0.0;
    for i in 0..traj.times.len() - 1 {
        z[..n].copy_from_slice(&traj.states[i]);
        z[n..n + m].copy_from_slice(&traj.inputs[i]);
        z[n + m] = traj.times[i];
        sum += c.eval(&z) * (traj.times[i + 1] - traj.times[i]);
    }
    z[..n].copy_from_slice(traj.final_state());
    sum + g.eval(&z)
}

/// A reference value function.
pub trait ValueOracle: Sync {
    fn value(&self, x: &[f64], t: f64) -> f64;

    /// True when derivative samples at `(x, t)` should be skipped because a
    /// known kink lies within `radius`.
    fn near_kink(&self, _x: &[f64], _t: f64, _radius: f64) -> bool {
        false
    }

    /// False for stand-ins such as a high-degree polynomial.
    fn is_exact(&self) -> bool {
        true
    }

    fn name(&self) -> String;
}

/// `V(x, t) = exp(t - T) x` for `x > 0` and `exp(T - t) x` for `x < 0`,
/// the value function of `min x(T)`, `x' = x u`, `|u| <= 1`.
#[derive(Clone, Copy, Debug)]
pub struct Ex1Oracle {
    pub horizon: f64,
}

impl Default for Ex1Oracle {
    fn default() -> Self {
        Self { horizon: 1.0 }
    }
}

impl ValueOracle for Ex1Oracle {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        let x = x[0];
        if x > 0.0 {
            (t - self.horizon).exp() * x
        } else if x < 0.0 {
            (self.horizon - t).exp() * x
        } else {
            0.0
        }
    }

    fn near_kink(&self, x: &[f64], _t: f64, radius: f64) -> bool {
        x[0].abs() < radius
    }

    fn name(&self) -> String {
        "ex1-analytic".into()
    }
}

/// A closed-form value function given as a closure.
pub struct AnalyticOracle<F> {
    pub name: String,
    pub function: F,
}

impl<F: Fn(&[f64], f64) -> f64 + Sync> ValueOracle for AnalyticOracle<F> {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        (self.function)(x, t)
    }

    fn name(&self) -> String {
        self.name.clone()
    }
}

/// A polynomial used as a non-oracle reference.
pub struct PolynomialReference {
    pub polynomial: Polynomial,
    pub n_states: usize,
}

impl ValueOracle for PolynomialReference {
    fn value(&self, x: &[f64], t: f64) -> f64 {
        let mut z = vec![0.0; self.polynomial.nvars()];
        z[..self.n_states].copy_from_slice(x);
        z[self.polynomial.nvars() - 1] = t;
        self.polynomial.eval(&z)
    }

    fn is_exact(&self) -> bool {
        false
    }

    fn name(&self) -> String {
        "polynomial-reference (not an oracle)".into()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub label: String,
    pub oracle: String,
    pub oracle_exact: bool,
    pub x0: Vec<f64>,
    pub realized_cost: f64,
    pub reference_costs: BTreeMap<String, f64>,
    /// Realized cost minus the best known cost.
    pub loss_estimate: f64,
    pub bound_c: f64,
    pub sup_f: f64,
    pub w1inf_distance_estimate: f64,
    pub bound_value: f64,
    pub bound_holds: bool,
    pub caveats: Vec<String>,
}

fn linspace(lo: f64, hi: f64, k: usize) -> impl Iterator<Item = f64> {
    (0..k).map(move |i| {
        if k == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (k - 1) as f64
        }
    })
}

/// Tensor grid with `k` points per axis, endpoints included.
fn grid_points(bounds: &[(f64, f64)], k: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for &(lo, hi) in bounds {
        out = out
            .into_iter()
            .flat_map(|p| {
                linspace(lo, hi, k).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

/// `2 max{1, T, T max_i sup |f_i|}` with the sup sampled on `Omega x U`.
pub fn bound_constant(spec: &OcpSpec, omega_box: &[(f64, f64)], grid: usize) -> (f64, f64) {
    let f: Vec<FastPoly> = spec.dynamics.iter().map(FastPoly::new).collect();
    let mut bounds = omega_box.to_vec();
    bounds.extend(spec.input_bounds());
    let n = spec.n_states();
    let mut z = vec![0.0; spec.nvars()];
    let mut sup: f64 = 0.0;
    for p in grid_points(&bounds, grid) {
        z[..p.len()].copy_from_slice(&p);
        if !spec.omega.contains(&z) || !spec.input_admissible(&p[n..], 1e-12) {
            continue;
        }
        for fi in &f {
            sup = sup.max(fi.eval(&z).abs());
        }
    }
    let t = spec.horizon;
    (2.0 * 1f64.max(t).max(t * sup), sup)
}

/// Sampled `||J - V||` in `W^{1,inf}(Omega x [0, T])`: the sup of the
/// difference plus the sup of each first partial difference. Derivatives of
/// the oracle use central differences and skip points near its kinks.
pub fn w1inf_distance(
    spec: &OcpSpec,
    j: &Polynomial,
    oracle: &dyn ValueOracle,
    omega_box: &[(f64, f64)],
    grid: usize,
    kink_radius: f64,
) -> f64 {
    let n = spec.n_states();
    let ti = spec.time_index();
    let jf = FastPoly::new(j);
    let mut partial_vars: Vec<usize> = (0..n).collect();
    partial_vars.push(ti);
    let dj: Vec<FastPoly> = partial_vars
        .iter()
        .map(|&v| FastPoly::new(&j.differentiate(v)))
        .collect();
    let mut bounds = omega_box.to_vec();
    bounds.push((0.0, spec.horizon));
    let mut sups = vec![0.0f64; partial_vars.len() + 1];
    let mut z = vec![0.0; spec.nvars()];
    let h = 1e-6;
    for p in grid_points(&bounds, grid) {
        let (x, t) = (&p[..n], p[n]);
        z[..n].copy_from_slice(x);
        z[ti] = t;
        if !spec.omega.contains(&z) {
            continue;
        }
        sups[0] = sups[0].max((jf.eval(&z) - oracle.value(x, t)).abs());
        if oracle.near_kink(x, t, kink_radius) {
            continue;
        }
        let mut xp = x.to_vec();
        for (k, d) in dj.iter().enumerate() {
            let dv = if k < n {
                xp[k] = x[k] + h;
                let a = oracle.value(&xp, t);
                xp[k] = x[k] - h;
                let b = oracle.value(&xp, t);
                xp[k] = x[k];
                (a - b) / (2.0 * h)
            } else {
                // one-sided at the ends of [0, T]
                let lo = (t - h).max(0.0);
                let hi = (t + h).min(spec.horizon);
                (oracle.value(x, hi) - oracle.value(x, lo)) / (hi - lo)
            };
            sups[k + 1] = sups[k + 1].max((d.eval(&z) - dv).abs());
        }
    }
    sups.iter().sum()
}

/// Inputs to [`performance_bound`].
pub struct BoundRequest<'a> {
    pub x0: &'a [f64],
    pub realized_cost: f64,
    pub reference_costs: BTreeMap<String, f64>,
    /// Box enclosing `Omega` over which the norm and `sup |f|` are sampled.
    pub omega_box: &'a [(f64, f64)],
    pub grid: usize,
}

/// Compares the realized loss of a controller built from `j` with
/// `C ||J - V||`.
pub fn performance_bound(
    spec: &OcpSpec,
    j: &Polynomial,
    oracle: Option<&dyn ValueOracle>,
    req: BoundRequest<'_>,
) -> Result<PerformanceReport, SimError> {
    let oracle = oracle.ok_or(SimError::OracleUnavailable)?;
    if req.omega_box.len() != spec.n_states() || req.x0.len() != spec.n_states() || req.grid == 0 {
        return Err(SimError::Invalid(
            "performance bound request has wrong dimensions".into(),
        ));
    }
    let (bound_c, sup_f) = bound_constant(spec, req.omega_box, req.grid);
    let dist = w1inf_distance(spec, j, oracle, req.omega_box, req.grid, 1e-3);
    let mut best = req.realized_cost;
    if oracle.is_exact() {
        best = best.min(oracle.value(req.x0, 0.0));
    }
    for &c in req.reference_costs.values() {
        best = best.min(c);
    }
    let loss = req.realized_cost - best;
    let bound_value = bound_c * dist;
    let mut caveats = vec![
        "the forward reachable set is assumed to stay in Omega; only the advisory sampler checks it".to_string(),
    ];
    if !oracle.is_exact() {
        caveats.push("reference value function is not an exact oracle".into());
    }
    Ok(PerformanceReport {
        label: "loss upper-bound estimate".into(),
        oracle: oracle.name(),
        oracle_exact: oracle.is_exact(),
        x0: req.x0.to_vec(),
        realized_cost: req.realized_cost,
        reference_costs: req.reference_costs,
        loss_estimate: loss,
        bound_c,
        sup_f,
        w1inf_distance_estimate: dist,
        bound_value,
        bound_holds: loss <= bound_value + 1e-9 * (1.0 + req.realized_cost.abs()),
        caveats,
    })
}
