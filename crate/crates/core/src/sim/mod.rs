//! Feedback controllers from value-function candidates and closed-loop
//! simulation.

mod perf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InputNormalization, InputSet, OcpSpec};
use crate::Polynomial;

pub use perf::{
    bound_constant, cost, performance_bound, w1inf_distance, AnalyticOracle, BoundRequest,
    Ex1Oracle, PerformanceReport, PolynomialReference, ValueOracle,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("dependence on input {0} is not affine")]
    NotInputAffine(usize),
    #[error("bang-bang extraction needs box inputs")]
    NotABox,
    #[error("input grid is empty: the input set rejects every sample")]
    EmptyGrid,
    #[error("state left the integrator safety box at t = {t}")]
    EscapedSafetyBox { t: f64, state: Vec<f64> },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("invalid simulation request: {0}")]
    Invalid(String),
    #[error("no value-function oracle is available")]
    OracleUnavailable,
}

/// Flattened polynomial for repeated evaluation in inner loops.
#[derive(Clone, Debug)]
pub(crate) struct FastPoly {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl FastPoly {
    pub fn new(p: &Polynomial) -> Self {
        Self {
            terms: p
                .terms()
                .map(|(m, c)| (c, m.powers().iter().map(|&(v, e)| (v, e as i32)).collect()))
                .collect(),
        }
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, pw) in &self.terms {
            let mut v = *c;
            for &(i, e) in pw {
                v *= if e == 1 { z[i] } else { z[i].powi(e) };
            }
            s += v;
        }
        s
    }
}

/// A state feedback law, or an open-loop input.
#[derive(Clone, Debug)]
pub enum Controller {
    /// `k_i = -sign(s_i(x, t))` with `sign(0) = +1`, in normalized inputs,
    /// mapped back through `normalization`.
    BangBang {
        switching: Vec<Polynomial>,
        normalization: InputNormalization,
    },
    /// First grid point minimizing `c + grad_x V . f`.
    SampledArgmin {
        hamiltonian: Polynomial,
        grid: Vec<Vec<f64>>,
    },
    /// Constant input.
    Constant(Vec<f64>),
}

/// `sign` with `sign(0) = 1`.
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Splits `p` into `p0 + sum_i p_i u_i`, failing when `p` is not affine in `u`.
fn input_affine_parts(
    spec: &OcpSpec,
    p: &Polynomial,
) -> Result<(Polynomial, Vec<Polynomial>), SimError> {
    let input_vars = spec.registry.input_vars();
    let mut p0 = p.clone();
    let mut parts = Vec::new();
    for (j, &v) in input_vars.iter().enumerate() {
        let d = p.differentiate(v);
        if input_vars.iter().any(|w| d.used_vars().contains(w)) {
            return Err(SimError::NotInputAffine(j));
        }
        p0 = p0.fix_var(v, 0.0);
        parts.push(d);
    }
    Ok((p0, parts))
}

/// Switching functions `c_i + grad_x V . f_i` for each input.
///
/// Box inputs are first normalized to `[-1, 1]^m`; a semialgebraic input
/// set is treated as its bounding box, which is exact when all box
/// vertices are admissible (checked).
pub fn extract_bangbang(spec: &OcpSpec, v: &Polynomial) -> Result<Controller, SimError> {
    let (work, normalization) = match &spec.inputs {
        InputSet::Empty => (spec.clone(), InputNormalization::identity(0)),
        InputSet::Box(_) => spec
            .normalize_input_box()
            .map_err(|e| SimError::Invalid(e.to_string()))?,
        InputSet::Semialgebraic { bounds, .. } => {
            let m = spec.m_inputs();
            for corner in 0..(1usize << m) {
                let u: Vec<f64> = (0..m)
                    .map(|j| {
                        if corner >> j & 1 == 1 {
                            bounds[j].1
                        } else {
                            bounds[j].0
                        }
                    })
                    .collect();
                if !spec.input_admissible(&u, 1e-12) {
                    return Err(SimError::NotABox);
                }
            }
            let mut boxed = spec.clone();
            boxed.inputs = InputSet::Box(crate::model::InputBox {
                intervals: bounds.clone(),
            });
            boxed
                .normalize_input_box()
                .map_err(|e| SimError::Invalid(e.to_string()))?
        }
    };
    let (_, cost_parts) = input_affine_parts(&work, &work.running_cost)?;
    let mut switching = cost_parts;
    for (k, f) in work.dynamics.iter().enumerate() {
        let (_, f_parts) = input_affine_parts(&work, f)?;
        let dv = v.differentiate(k);
        for (s, fi) in switching.iter_mut().zip(f_parts) {
            *s = &*s + &(&dv * &fi);
        }
    }
    Ok(Controller::BangBang {
        switching,
        normalization,
    })
}

/// Admissible inputs on a tensor grid with `resolution` points per input,
/// endpoints included; a single empty point when there are no inputs.
pub fn input_grid(spec: &OcpSpec, resolution: usize) -> Result<Vec<Vec<f64>>, SimError> {
    let bounds = spec.input_bounds();
    let m = bounds.len();
    let mut grid = Vec::new();
    if m == 0 {
        grid.push(Vec::new());
    } else if resolution > 0 {
        let total = resolution
            .checked_pow(m as u32)
            .ok_or(SimError::Invalid("grid too large".into()))?;
        for idx in 0..total {
            let mut rem = idx;
            let u: Vec<f64> = bounds
                .iter()
                .map(|&(lo, hi)| {
                    let k = rem % resolution;
                    rem /= resolution;
                    if resolution == 1 {
                        0.5 * (lo + hi)
                    } else {
                        lo + (hi - lo) * k as f64 / (resolution - 1) as f64
                    }
                })
                .collect();
            if spec.input_admissible(&u, 0.0) {
                grid.push(u);
            }
        }
    }
    if grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    Ok(grid)
}

/// Grid argmin of `c + grad_x V . f` over `resolution` points per input.
pub fn extract_argmin(
    spec: &OcpSpec,
    v: &Polynomial,
    resolution: usize,
) -> Result<Controller, SimError> {
    let mut h = spec.running_cost.clone();
    for (k, f) in spec.dynamics.iter().enumerate() {
        h = &h + &(&v.differentiate(k) * f);
    }
    let grid = input_grid(spec, resolution)?;
    Ok(Controller::SampledArgmin {
        hamiltonian: h,
        grid,
    })
}

/// Controller prepared for fast evaluation.
pub(crate) struct CompiledController<'a> {
    kind: Compiled<'a>,
    n: usize,
    m: usize,
}

enum Compiled<'a> {
    BangBang(Vec<FastPoly>, &'a InputNormalization),
    Argmin(FastPoly, &'a [Vec<f64>]),
    Constant(&'a [f64]),
}

impl<'a> CompiledController<'a> {
    pub fn new(c: &'a Controller, n: usize, m: usize) -> Self {
        let kind = match c {
            Controller::BangBang {
                switching,
                normalization,
            } => Compiled::BangBang(switching.iter().map(FastPoly::new).collect(), normalization),
            Controller::SampledArgmin { hamiltonian, grid } => {
                Compiled::Argmin(FastPoly::new(hamiltonian), grid)
            }
            Controller::Constant(u) => Compiled::Constant(u),
        };
        Self { kind, n, m }
    }

    /// Writes the input into `u`; `z` is scratch of universe length.
    pub fn input(&self, x: &[f64], t: f64, z: &mut [f64], u: &mut [f64]) {
        z[..self.n].copy_from_slice(x);
        z[self.n..self.n + self.m].iter_mut().for_each(|v| *v = 0.0);
        z[self.n + self.m] = t;
        match &self.kind {
            Compiled::BangBang(s, norm) => {
                for (j, sj) in s.iter().enumerate() {
                    let un = -sign(sj.eval(z));
                    u[j] = norm.mid[j] + norm.half[j] * un;
                }
            }
            Compiled::Argmin(h, grid) => {
                let mut best = f64::INFINITY;
                let mut arg = 0;
                for (k, g) in grid.iter().enumerate() {
                    z[self.n..self.n + self.m].copy_from_slice(g);
                    let v = h.eval(z);
                    if v < best {
                        best = v;
                        arg = k;
                    }
                }
                u.copy_from_slice(&grid[arg]);
            }
            Compiled::Constant(c) => u.copy_from_slice(c),
        }
    }

    fn is_bangbang(&self) -> bool {
        matches!(self.kind, Compiled::BangBang(..))
    }
}

/// Refinement levels used inside a sliding mode.
const SLIDING_REFINEMENT: u32 = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntegratorSettings {
    /// Number of base steps over `[t0, T]`.
    pub steps: usize,
    /// Maximum number of halvings of a step around a switch.
    pub max_refinement: u32,
    /// Box the state must stay in; `None` derives 10x the bounding box of `Omega`.
    pub safety_box: Option<Vec<(f64, f64)>>,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            steps: 100_000,
            max_refinement: 10,
            safety_box: None,
        }
    }
}

impl IntegratorSettings {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }
}

/// A sampled state and input path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Input applied on `[times[i], times[i+1])`, averaged over a refined
    /// step; the last entry is the feedback at the final state.
    pub inputs: Vec<Vec<f64>>,
    pub base_steps: usize,
    pub refined_steps: usize,
    /// Largest step-doubling error estimate over the checked steps.
    pub max_error_estimate: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least one node")
    }

    /// CSV with header `t,<states>,<inputs>`.
    pub fn to_csv(&self, spec: &OcpSpec) -> String {
        let mut out = String::from("t");
        for name in spec.registry.states.iter().chain(&spec.registry.inputs) {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for ((t, x), u) in self.times.iter().zip(&self.states).zip(&self.inputs) {
            out.push_str(&format!("{t}"));
            for v in x.iter().chain(u) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Dynamics prepared for fast evaluation.
pub(crate) struct CompiledDynamics {
    f: Vec<FastPoly>,
    n: usize,
    m: usize,
    /// RK4 stages and the intermediate state.
    scratch: std::cell::RefCell<[Vec<f64>; 5]>,
}

impl CompiledDynamics {
    pub fn new(spec: &OcpSpec) -> Self {
        let n = spec.n_states();
        Self {
            f: spec.dynamics.iter().map(FastPoly::new).collect(),
            n,
            m: spec.m_inputs(),
            scratch: std::cell::RefCell::new(std::array::from_fn(|_| vec![0.0; n])),
        }
    }

    #[inline]
    fn eval(&self, x: &[f64], u: &[f64], t: f64, z: &mut [f64], out: &mut [f64]) {
        z[..self.n].copy_from_slice(x);
        z[self.n..self.n + self.m].copy_from_slice(u);
        z[self.n + self.m] = t;
        for (o, f) in out.iter_mut().zip(&self.f) {
            *o = f.eval(z);
        }
    }

    /// One classical RK4 step with the input held constant.
    pub fn rk4(&self, x: &[f64], u: &[f64], t: f64, h: f64, z: &mut [f64], out: &mut [f64]) {
        let n = self.n;
        let mut scratch = self.scratch.borrow_mut();
        let [k1, k2, k3, k4, tmp] = &mut *scratch;
        self.eval(x, u, t, z, k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.eval(tmp, u, t + 0.5 * h, z, k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.eval(tmp, u, t + 0.5 * h, z, k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        self.eval(tmp, u, t + h, z, k4);
        for i in 0..n {
            out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Safety box: ten times the half-widths of `Omega`'s bounding box around its centre.
pub fn default_safety_box(spec: &OcpSpec, center: &[f64]) -> Vec<(f64, f64)> {
    spec.omega_bounds(center)
        .into_iter()
        .map(|(a, b)| {
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a).max(1e-9);
            (mid - 10.0 * half, mid + 10.0 * half)
        })
        .collect()
}

/// Integrates the closed loop from `(x0, t0)` to the horizon.
pub fn simulate(
    spec: &OcpSpec,
    controller: &Controller,
    x0: &[f64],
    t0: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory, SimError> {
    let n = spec.n_states();
    let m = spec.m_inputs();
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Invalid(
            "x0 must be finite with one entry per state".into(),
        ));
    }
    if !(0.0..=spec.horizon).contains(&t0) || settings.steps == 0 {
        return Err(SimError::Invalid(
            "t0 must lie in [0, T] and steps must be positive".into(),
        ));
    }
    if let Controller::Constant(u) = controller {
        if u.len() != m {
            return Err(SimError::Invalid(
                "constant input has the wrong dimension".into(),
            ));
        }
    }
    let safety = match &settings.safety_box {
        Some(b) => b.clone(),
        None => default_safety_box(spec, x0),
    };
    let dyn_ = CompiledDynamics::new(spec);
    let ctrl = CompiledController::new(controller, n, m);
    let mut z = vec![0.0; spec.nvars()];
    let h = (spec.horizon - t0) / settings.steps as f64;

    let mut traj = Trajectory {
        times: Vec::with_capacity(settings.steps + 1),
        states: Vec::with_capacity(settings.steps + 1),
        inputs: Vec::with_capacity(settings.steps + 1),
        base_steps: settings.steps,
        refined_steps: 0,
        max_error_estimate: 0.0,
    };
    let mut x = x0.to_vec();
    let mut u = vec![0.0; m];
    let mut u_end = vec![0.0; m];
    let mut next = vec![0.0; n];
    let mut u_avg = vec![0.0; m];
    let mut sliding = false;
    let mut t = t0;
    for step in 0..settings.steps {
        let t_end = if step + 1 == settings.steps {
            spec.horizon
        } else {
            t0 + (step + 1) as f64 * h
        };
        let hh = t_end - t;
        ctrl.input(&x, t, &mut z, &mut u);
        dyn_.rk4(&x, &u, t, hh, &mut z, &mut next);
        let switched = ctrl.is_bangbang() && {
            ctrl.input(&next, t_end, &mut z, &mut u_end);
            u_end != u
        };
        if switched && settings.max_refinement > 0 {
            // Re-evaluate the feedback on a finer grid across the switch and
            // keep one node carrying the average input, the equivalent
            // control of a sliding mode. Inside a sliding mode (the previous
            // step switched too) a coarser grid is enough.
            let levels = if sliding {
                settings.max_refinement.min(SLIDING_REFINEMENT)
            } else {
                settings.max_refinement
            };
            let pieces = 1usize << levels;
            let hs = hh / pieces as f64;
            let start = x.clone();
            u_avg.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..pieces {
                let ts = t + k as f64 * hs;
                ctrl.input(&x, ts, &mut z, &mut u);
                dyn_.rk4(&x, &u, ts, hs, &mut z, &mut next);
                for (a, v) in u_avg.iter_mut().zip(&u) {
                    *a += v / pieces as f64;
                }
                x.copy_from_slice(&next);
                check_state(&x, ts + hs, &safety)?;
            }
            traj.times.push(t);
            traj.states.push(start);
            traj.inputs.push(u_avg.clone());
            traj.refined_steps += 1;
        } else {
            if step % 64 == 0 {
                // Step-doubling error estimate.
                let mut half = vec![0.0; n];
                let mut two = vec![0.0; n];
                dyn_.rk4(&x, &u, t, 0.5 * hh, &mut z, &mut half);
                dyn_.rk4(&half, &u, t + 0.5 * hh, 0.5 * hh, &mut z, &mut two);
                let err = two
                    .iter()
                    .zip(&next)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
                    / 15.0;
                traj.max_error_estimate = traj.max_error_estimate.max(err);
            }
            traj.times.push(t);
            traj.states.push(x.clone());
            traj.inputs.push(u.clone());
            x.copy_from_slice(&next);
            check_state(&x, t_end, &safety)?;
        }
        sliding = switched;
        t = t_end;
    }
    ctrl.input(&x, t, &mut z, &mut u);
    traj.times.push(t);
    traj.states.push(x);
    traj.inputs.push(u);
    Ok(traj)
}

fn check_state(x: &[f64], t: f64, safety: &[(f64, f64)]) -> Result<(), SimError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite(t));
    }
    if x.iter().zip(safety).any(|(v, &(a, b))| *v < a || *v > b) {
        return Err(SimError::EscapedSafetyBox {
            t,
            state: x.to_vec(),
        });
    }
    Ok(())
}

/// State at the horizon under a constant input, by `steps` fixed RK4 steps
/// from `(x0, 0)`. Nothing but the end point is kept.
pub fn flow(spec: &OcpSpec, u: &[f64], x0: &[f64], steps: usize) -> Result<Vec<f64>, SimError> {
    if u.len() != spec.m_inputs() || x0.len() != spec.n_states() || steps == 0 {
        return Err(SimError::Invalid("bad input, initial state or step count".into()));
    }
    let dyn_ = CompiledDynamics::new(spec);
    let mut z = vec![0.0; spec.nvars()];
    let h = spec.horizon / steps as f64;
    let mut x = x0.to_vec();
    let mut next = x.clone();
    for k in 0..steps {
        let t = k as f64 * h;
        dyn_.rk4(&x, u, t, h, &mut z, &mut next);
        std::mem::swap(&mut x, &mut next);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(t + h));
        }
    }
    Ok(x)
}

/// Open-loop simulation under a piecewise-constant input schedule
/// (`schedule[k]` is applied on the k-th of `schedule.len()` equal pieces).
pub fn simulate_schedule(
    spec: &OcpSpec,
    schedule: &[Vec<f64>],
    x0: &[f64],
    settings: &IntegratorSettings,
) -> Result<Trajectory, SimError> {
    let n = spec.n_states();
    let m = spec.m_inputs();
    if schedule.is_empty() || schedule.iter().any(|u| u.len() != m) || x0.len() != n {
        return Err(SimError::Invalid("bad schedule or initial state".into()));
    }
    let safety = match &settings.safety_box {
        Some(b) => b.clone(),
        None => default_safety_box(spec, x0),
    };
    let dyn_ = CompiledDynamics::new(spec);
    let mut z = vec![0.0; spec.nvars()];
    let h = spec.horizon / settings.steps as f64;
    let mut traj = Trajectory {
        times: Vec::with_capacity(settings.steps + 1),
        states: Vec::with_capacity(settings.steps + 1),
        inputs: Vec::with_capacity(settings.steps + 1),
        base_steps: settings.steps,
        refined_steps: 0,
        max_error_estimate: 0.0,
    };
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let pieces = schedule.len();
    for step in 0..settings.steps {
        let t = step as f64 * h;
        let piece = ((step * pieces) / settings.steps).min(pieces - 1);
        let u = &schedule[piece];
        dyn_.rk4(&x, u, t, h, &mut z, &mut next);
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.inputs.push(u.clone());
        x.copy_from_slice(&next);
        check_state(&x, t + h, &safety)?;
    }
    traj.times.push(spec.horizon);
    traj.states.push(x);
    traj.inputs.push(schedule[pieces - 1].clone());
    Ok(traj)
}

#[cfg(test)]
mod tests;
