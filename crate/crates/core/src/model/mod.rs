//! Polynomial optimal control problems and synthesis configuration.
//!
//! Every polynomial of a problem lives in one variable universe ordered as
//! states, then inputs, then time.

mod containment;
mod json;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::PolyError;
use crate::Polynomial;

pub use containment::{check_containment_condition, ContainmentReport, Violation};
pub use json::{parse_problem, preset, serialize_problem, PRESET_NAMES};

/// Largest decision-polynomial degree accepted from configuration.
pub const MAX_DEGREE: u32 = 30;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),
    #[error("degree {0} exceeds the supported maximum of {MAX_DEGREE}")]
    DegreeOverflow(u32),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("degenerate input interval for input {0}")]
    DegenerateInterval(usize),
    #[error("{context}: {source}")]
    Poly { context: String, source: PolyError },
}

/// Names of the variables and their universe indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableRegistry {
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub time: String,
}

impl VariableRegistry {
    pub fn new(states: Vec<String>, inputs: Vec<String>) -> Result<Self, ModelError> {
        let reg = Self {
            states,
            inputs,
            time: "t".to_string(),
        };
        let names = reg.names();
        for (i, a) in names.iter().enumerate() {
            if a.is_empty()
                || !a
                    .chars()
                    .next()
                    .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            {
                return Err(ModelError::Schema(format!("bad variable name '{a}'")));
            }
            if names[..i].contains(a) {
                return Err(ModelError::Schema(format!("duplicate variable name '{a}'")));
            }
        }
        if reg.states.is_empty() {
            return Err(ModelError::Schema("at least one state is required".into()));
        }
        Ok(reg)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn m_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn nvars(&self) -> usize {
        self.n_states() + self.m_inputs() + 1
    }

    pub fn input_index(&self, j: usize) -> usize {
        self.n_states() + j
    }

    pub fn time_index(&self) -> usize {
        self.n_states() + self.m_inputs()
    }

    pub fn state_vars(&self) -> Vec<usize> {
        (0..self.n_states()).collect()
    }

    pub fn input_vars(&self) -> Vec<usize> {
        (0..self.m_inputs()).map(|j| self.input_index(j)).collect()
    }

    /// All names in universe order.
    pub fn names(&self) -> Vec<&str> {
        self.states
            .iter()
            .chain(&self.inputs)
            .map(String::as_str)
            .chain(std::iter::once(self.time.as_str()))
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| *n == name)
    }
}

/// `{z : h(z) >= 0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemialgebraicSet {
    pub defining_poly: Polynomial,
}

impl SemialgebraicSet {
    pub fn new(defining_poly: Polynomial) -> Self {
        Self { defining_poly }
    }

    pub fn nvars(&self) -> usize {
        self.defining_poly.nvars()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.defining_poly.eval(point) >= 0.0
    }

    /// Estimates the bounding box of the set restricted to `vars` by marching
    /// along rays from `center` (which must lie in the set).
    ///
    /// Exact for star-shaped sets up to the ray resolution; used only for
    /// sampling boxes and integrator safety limits.
    pub fn bounding_box_estimate(&self, vars: &[usize], center: &[f64]) -> Vec<(f64, f64)> {
        let k = vars.len();
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        for i in 0..k {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; k];
                d[i] = s;
                dirs.push(d);
            }
        }
        // Deterministic quasi-random directions from a Halton sequence.
        let primes = [2u32, 3, 5, 7, 11, 13, 17, 19, 23, 29];
        for n in 1..=400u32 {
            let d: Vec<f64> = (0..k)
                .map(|i| 2.0 * halton(n, primes[i % primes.len()]) - 1.0)
                .collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-9 {
                dirs.push(d.iter().map(|v| v / norm).collect());
            }
        }
        let mut lo: Vec<f64> = vars.iter().map(|&v| center[v]).collect();
        let mut hi = lo.clone();
        let mut point = center.to_vec();
        for d in &dirs {
            let mut r_last = 0.0;
            let mut r = 1e-3;
            while r < 1e4 {
                for (i, &v) in vars.iter().enumerate() {
                    point[v] = center[v] + r * d[i];
                }
                if self.contains(&point) {
                    r_last = r;
                }
                r *= 1.01;
            }
            for (i, &v) in vars.iter().enumerate() {
                let x = center[v] + r_last * d[i];
                lo[i] = lo[i].min(x);
                hi[i] = hi[i].max(x);
            }
            point.copy_from_slice(center);
        }
        lo.into_iter().zip(hi).collect()
    }
}

fn halton(mut n: u32, base: u32) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while n > 0 {
        f /= base as f64;
        r += f * (n % base) as f64;
        n /= base;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub intervals: Vec<(f64, f64)>,
}

/// Admissible input set.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSet {
    /// No inputs.
    Empty,
    Box(InputBox),
    /// `{u : h_U(u) >= 0}` with a box known to contain it.
    Semialgebraic {
        set: SemialgebraicSet,
        bounds: Vec<(f64, f64)>,
    },
}

/// Affine map `u = mid + half * u_normalized` recorded by input normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub mid: Vec<f64>,
    pub half: Vec<f64>,
}

impl InputNormalization {
    pub fn identity(m: usize) -> Self {
        Self {
            mid: vec![0.0; m],
            half: vec![1.0; m],
        }
    }

    pub fn to_original(&self, normalized: &[f64]) -> Vec<f64> {
        normalized
            .iter()
            .zip(self.mid.iter().zip(&self.half))
            .map(|(u, (m, h))| m + h * u)
            .collect()
    }

    pub fn to_normalized(&self, original: &[f64]) -> Vec<f64> {
        original
            .iter()
            .zip(self.mid.iter().zip(&self.half))
            .map(|(u, (m, h))| (u - m) / h)
            .collect()
    }
}

/// The tuple `{c, g, f, Omega, U, T}`.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpSpec {
    pub registry: VariableRegistry,
    pub running_cost: Polynomial,
    pub terminal_cost: Polynomial,
    pub dynamics: Vec<Polynomial>,
    pub omega: SemialgebraicSet,
    pub inputs: InputSet,
    pub horizon: f64,
}

impl OcpSpec {
    pub fn n_states(&self) -> usize {
        self.registry.n_states()
    }

    pub fn m_inputs(&self) -> usize {
        self.registry.m_inputs()
    }

    pub fn nvars(&self) -> usize {
        self.registry.nvars()
    }

    pub fn time_index(&self) -> usize {
        self.registry.time_index()
    }

    /// Checks variable dependencies, dimensions and the horizon.
    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n_states();
        let nv = self.nvars();
        let t = self.time_index();
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ModelError::Invalid("horizon_T must be positive".into()));
        }
        if self.dynamics.len() != n {
            return Err(ModelError::Invalid(format!(
                "{} dynamics components for {n} states",
                self.dynamics.len()
            )));
        }
        let all = [
            &self.running_cost,
            &self.terminal_cost,
            &self.omega.defining_poly,
        ]
        .into_iter()
        .chain(&self.dynamics);
        for p in all {
            if p.nvars() != nv {
                return Err(ModelError::Invalid(
                    "polynomial outside the problem universe".into(),
                ));
            }
        }
        let uses = |p: &Polynomial, allowed: &dyn Fn(usize) -> bool, what: &str| match p
            .used_vars()
            .into_iter()
            .find(|&v| !allowed(v))
        {
            Some(v) => Err(ModelError::Invalid(format!(
                "{what} depends on '{}'",
                self.registry.names()[v]
            ))),
            None => Ok(()),
        };
        uses(&self.terminal_cost, &|v| v < n, "terminal_cost")?;
        uses(&self.omega.defining_poly, &|v| v < n, "omega_h")?;
        for f in &self.dynamics {
            uses(f, &|v| v != t, "dynamics")?;
        }
        match &self.inputs {
            InputSet::Empty => {
                if self.m_inputs() != 0 {
                    return Err(ModelError::Invalid("inputs declared without a set".into()));
                }
            }
            InputSet::Box(b) => {
                if b.intervals.len() != self.m_inputs() {
                    return Err(ModelError::Invalid("input box dimension mismatch".into()));
                }
                for (i, &(a, b)) in b.intervals.iter().enumerate() {
                    if !(a.is_finite() && b.is_finite() && a < b) {
                        return Err(ModelError::DegenerateInterval(i));
                    }
                }
            }
            InputSet::Semialgebraic { set, bounds } => {
                uses(&set.defining_poly, &|v| v >= n && v < t, "input set")?;
                if bounds.len() != self.m_inputs() {
                    return Err(ModelError::Invalid(
                        "input bounds dimension mismatch".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Domain inequalities describing `U`, one per box coordinate or the
    /// single `h_U`.
    pub fn input_domain_polys(&self) -> Vec<(String, Polynomial)> {
        let nv = self.nvars();
        match &self.inputs {
            InputSet::Empty => Vec::new(),
            InputSet::Box(b) => b
                .intervals
                .iter()
                .enumerate()
                .map(|(j, &(lo, hi))| {
                    // 1 - ((u - mid) / half)^2 = (hi - u)(u - lo) / half^2
                    let u = Polynomial::var(nv, self.registry.input_index(j));
                    let half = 0.5 * (hi - lo);
                    let p = &u.scale(-1.0).add_constant(hi) * &u.add_constant(-lo);
                    (format!("h_U[{j}]"), p.scale(1.0 / (half * half)))
                })
                .collect(),
            InputSet::Semialgebraic { set, .. } => {
                vec![("h_U".to_string(), set.defining_poly.clone())]
            }
        }
    }

    /// Per-input interval enclosing `U`.
    pub fn input_bounds(&self) -> Vec<(f64, f64)> {
        match &self.inputs {
            InputSet::Empty => Vec::new(),
            InputSet::Box(b) => b.intervals.clone(),
            InputSet::Semialgebraic { bounds, .. } => bounds.clone(),
        }
    }

    pub fn input_admissible(&self, u: &[f64], tol: f64) -> bool {
        match &self.inputs {
            InputSet::Empty => u.is_empty(),
            InputSet::Box(b) => b
                .intervals
                .iter()
                .zip(u)
                .all(|(&(lo, hi), &v)| v >= lo - tol && v <= hi + tol),
            InputSet::Semialgebraic { set, .. } => {
                let mut z = vec![0.0; self.nvars()];
                for (j, &v) in u.iter().enumerate() {
                    z[self.registry.input_index(j)] = v;
                }
                set.defining_poly.eval(&z) >= -tol
            }
        }
    }

    /// Packs `(x, u, t)` into a universe point.
    pub fn point(&self, x: &[f64], u: &[f64], t: f64) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.nvars());
        z.extend_from_slice(x);
        z.extend_from_slice(u);
        z.push(t);
        z
    }

    /// Rewrites a box-constrained problem over `[-1, 1]^m`.
    pub fn normalize_input_box(&self) -> Result<(OcpSpec, InputNormalization), ModelError> {
        let InputSet::Box(b) = &self.inputs else {
            return Err(ModelError::Invalid("input set is not a box".into()));
        };
        let nv = self.nvars();
        let mut scale = vec![1.0; nv];
        let mut offset = vec![0.0; nv];
        let mut norm = InputNormalization::identity(self.m_inputs());
        for (j, &(lo, hi)) in b.intervals.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ModelError::DegenerateInterval(j));
            }
            let v = self.registry.input_index(j);
            norm.mid[j] = 0.5 * (lo + hi);
            norm.half[j] = 0.5 * (hi - lo);
            scale[v] = norm.half[j];
            offset[v] = norm.mid[j];
        }
        let sub = |p: &Polynomial| {
            p.affine_substitute(&scale, &offset)
                .map_err(|source| ModelError::Poly {
                    context: "input normalization".into(),
                    source,
                })
        };
        let mut out = self.clone();
        out.running_cost = sub(&self.running_cost)?;
        out.dynamics = self.dynamics.iter().map(sub).collect::<Result<_, _>>()?;
        out.inputs = InputSet::Box(InputBox {
            intervals: vec![(-1.0, 1.0); self.m_inputs()],
        });
        Ok((out, norm))
    }

    /// Bounding box of `Omega` over the states, estimated from `center`.
    pub fn omega_bounds(&self, center: &[f64]) -> Vec<(f64, f64)> {
        let mut z = vec![0.0; self.nvars()];
        z[..center.len()].copy_from_slice(center);
        self.omega
            .bounding_box_estimate(&self.registry.state_vars(), &z)
    }

    /// Same problem with the dynamics negated.
    pub fn reversed(&self) -> OcpSpec {
        let mut out = self.clone();
        out.dynamics = self.dynamics.iter().map(|f| -f).collect();
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Weight {
    Uniform,
    Dirac { time: f64 },
}

/// How states and time are mapped into `[-1, 1]` before compiling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainScaling {
    /// Map `Lambda x [0, T]`.
    Lambda,
    /// Map the bounding box of `Omega` and `[0, T]`. Keeps the monomials
    /// bounded wherever the constraints must hold.
    #[default]
    Omega,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub lambda_box: Vec<(f64, f64)>,
    pub weight: Weight,
    pub degree: u32,
    /// Multiplier degrees for the boundary constraint (one entry, for `h_Omega`).
    pub boundary_multipliers: Option<Vec<u32>>,
    /// Multiplier degrees for the dissipation constraint, in the order
    /// `h_Omega`, input domain polynomials, time window.
    pub dissipation_multipliers: Option<Vec<u32>>,
    pub scaling: DomainScaling,
    /// Margin subtracted from both constraints to make them strict.
    pub strict_margin: f64,
}

impl SynthesisConfig {
    pub fn new(lambda_box: Vec<(f64, f64)>, weight: Weight, degree: u32) -> Self {
        Self {
            lambda_box,
            weight,
            degree,
            boundary_multipliers: None,
            dissipation_multipliers: None,
            scaling: DomainScaling::Omega,
            strict_margin: 0.0,
        }
    }

    pub fn validate(&self, spec: &OcpSpec) -> Result<(), ModelError> {
        if self.degree > MAX_DEGREE {
            return Err(ModelError::DegreeOverflow(self.degree));
        }
        if self.lambda_box.len() != spec.n_states() {
            return Err(ModelError::Invalid("lambda_box dimension mismatch".into()));
        }
        for &(a, b) in &self.lambda_box {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(ModelError::Invalid(
                    "lambda_box intervals must satisfy lo < hi".into(),
                ));
            }
        }
        if let Weight::Dirac { time } = self.weight {
            if !(0.0..=spec.horizon).contains(&time) {
                return Err(ModelError::Invalid(
                    "dirac weight time outside [0, T]".into(),
                ));
            }
        }
        if !(self.strict_margin >= 0.0) {
            return Err(ModelError::Invalid(
                "strict_margin must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn lambda_center(&self) -> Vec<f64> {
        self.lambda_box.iter().map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn lambda_volume(&self) -> f64 {
        self.lambda_box.iter().map(|(a, b)| b - a).product()
    }
}

/// A parsed problem file.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub spec: OcpSpec,
    pub config: SynthesisConfig,
    /// Initial state for simulation, when the file provides one.
    pub x0: Option<Vec<f64>>,
}

#[cfg(test)]
mod tests;
