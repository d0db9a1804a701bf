//! Polynomial sub-value functions from the SOS tightening of the relaxed
//! HJB inequalities.
//!
//! The decision polynomial `P(x, t)` is maximized in a weighted integral
//! subject to two Putinar constraints:
//!
//! * boundary: `g(x) - P(x, T) - s0 h_Omega` is SOS,
//! * dissipation: `dP/dt + c + grad_x P . f - s1 h_Omega - s2 h_U - s3 h_T` is SOS,
//!
//! with `h_T = T t - t^2`. States and time are first mapped affinely into
//! `[-1, 1]` (see [`DomainScaling`]) and box inputs normalized to `[-1, 1]^m`.

mod study;
mod verify;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DomainScaling, InputNormalization, InputSet, ModelError, OcpSpec, SynthesisConfig, Weight};
use crate::poly::{Monomial, MonomialBasis, PolyError};
use crate::sdp::{self, SdpBuilder, SdpError, SdpProblem, SdpSolution, SolveStatus, SolverSettings};
use crate::sos::{compile_putinar, AffinePoly, ConstraintCheck, PutinarDegrees, SosConstraint, SosError};
use crate::Polynomial;

pub use study::{
    degree_sweep, hjb_residual, hjb_residual_with, l1_error, ConvergenceStudy, DegreeRecord, ResidualField, SweepOptions,
};
pub use verify::{verify_certificate, VerificationReport};

/// Version string written into certificates.
pub const CERTIFICATE_VERSION: &str = concat!("subvalue ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum HjbError {
    #[error("degree {degree} is too low: need at least {required} (max of deg g, deg c, 1 + deg f); raise degree")]
    DegreeTooLow { degree: u32, required: u32 },
    #[error("SOS program is infeasible at degree {degree} ({status:?}); raise degree")]
    Infeasible { degree: u32, status: SolveStatus },
    #[error("solver did not converge at degree {degree}: {status:?} (primal residual {primal_residual:.3e}, gap {gap:.3e})")]
    NotConverged {
        degree: u32,
        status: SolveStatus,
        primal_residual: f64,
        gap: f64,
    },
    #[error("malformed certificate: {0}")]
    Certificate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// Affine change of variables `z = scale * z~ + offset` over the universe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainMap {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl DomainMap {
    fn identity(nvars: usize) -> Self {
        Self {
            scale: vec![1.0; nvars],
            offset: vec![0.0; nvars],
        }
    }

    /// `p(scale * z~ + offset)`.
    pub fn to_scaled(&self, p: &Polynomial) -> Result<Polynomial, PolyError> {
        p.affine_substitute(&self.scale, &self.offset)
    }

    /// `p~((z - offset) / scale)`.
    pub fn to_original(&self, p: &Polynomial) -> Result<Polynomial, PolyError> {
        let inv: Vec<f64> = self.scale.iter().map(|a| 1.0 / a).collect();
        let off: Vec<f64> = self.offset.iter().zip(&self.scale).map(|(b, a)| -b / a).collect();
        p.affine_substitute(&inv, &off)
    }

    pub fn point_to_scaled(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(v, (a, b))| (v - b) / a)
            .collect()
    }
}

/// The problem in normalized inputs and scaled coordinates.
#[derive(Clone, Debug)]
pub(crate) struct ScaledProblem {
    pub nvars: usize,
    pub n: usize,
    pub time: usize,
    pub horizon: f64,
    pub map: DomainMap,
    pub normalization: InputNormalization,
    /// Running cost, terminal cost and dynamics in scaled coordinates.
    pub c: Polynomial,
    pub g: Polynomial,
    pub f: Vec<Polynomial>,
    pub h_omega: Polynomial,
    pub h_inputs: Vec<(String, Polynomial)>,
    pub h_time: Polynomial,
    /// Scaled image of the weight's support: the `Lambda` box and the time
    /// interval, or the Dirac time.
    pub lambda: Vec<(f64, f64)>,
    pub time_support: TimeSupport,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum TimeSupport {
    Interval(f64, f64),
    At(f64),
}

/// Rescales so the largest coefficient has magnitude one; the set `{h >= 0}`
/// is unchanged.
fn unit_scaled(h: &Polynomial) -> Polynomial {
    let m = h.max_abs_coeff();
    if m > 0.0 {
        h.scale(1.0 / m)
    } else {
        h.clone()
    }
}

impl ScaledProblem {
    pub fn new(spec: &OcpSpec, config: &SynthesisConfig) -> Result<Self, HjbError> {
        let (work, normalization) = match &spec.inputs {
            InputSet::Box(_) => spec.normalize_input_box()?,
            _ => (spec.clone(), InputNormalization::identity(spec.m_inputs())),
        };
        let nvars = spec.nvars();
        let n = spec.n_states();
        let time = spec.time_index();
        let horizon = spec.horizon;
        let mut map = DomainMap::identity(nvars);
        let boxes = match config.scaling {
            DomainScaling::Lambda => Some(config.lambda_box.clone()),
            DomainScaling::Omega => Some(spec.omega_bounds(&config.lambda_center())),
            DomainScaling::None => None,
        };
        if let Some(boxes) = &boxes {
            for (i, &(lo, hi)) in boxes.iter().enumerate() {
                map.scale[i] = 0.5 * (hi - lo);
                map.offset[i] = 0.5 * (hi + lo);
            }
            map.scale[time] = 0.5 * horizon;
            map.offset[time] = 0.5 * horizon;
        }
        let sub = |p: &Polynomial| map.to_scaled(p);
        let t = Polynomial::var(nvars, time);
        let h_time = if boxes.is_some() {
            t.pow(2).scale(-1.0).add_constant(1.0)
        } else {
            &t.scale(horizon) - &t.pow(2)
        };
        let lambda = config
            .lambda_box
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| ((lo - map.offset[i]) / map.scale[i], (hi - map.offset[i]) / map.scale[i]))
            .collect();
        let to_t = |s: f64| (s - map.offset[time]) / map.scale[time];
        let time_support = match config.weight {
            Weight::Uniform => TimeSupport::Interval(to_t(0.0), to_t(horizon)),
            Weight::Dirac { time: s } => TimeSupport::At(to_t(s)),
        };
        Ok(Self {
            nvars,
            n,
            time,
            horizon,
            c: sub(&work.running_cost)?,
            g: sub(&work.terminal_cost)?,
            f: work.dynamics.iter().map(sub).collect::<Result<_, _>>()?,
            h_omega: unit_scaled(&sub(&work.omega.defining_poly)?),
            h_inputs: work
                .input_domain_polys()
                .into_iter()
                .map(|(l, h)| (l, unit_scaled(&h)))
                .collect(),
            h_time,
            lambda,
            time_support,
            map,
            normalization,
        })
    }

    /// Variables `P` may depend on: states then time.
    pub fn p_vars(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.n).collect();
        v.push(self.time);
        v
    }

    pub fn time_scale(&self) -> f64 {
        self.map.scale[self.time]
    }

    /// Dissipation target for a concrete `P~`, multiplied by the time scale:
    /// `dP~/dt~ + a_t c~ + sum_i (a_t / a_i) dP~/dx~_i f~_i`.
    pub fn dissipation(&self, p: &Polynomial) -> Polynomial {
        let at = self.time_scale();
        let mut out = &p.differentiate(self.time) + &self.c.scale(at);
        for (i, fi) in self.f.iter().enumerate() {
            let k = at / self.map.scale[i];
            out = &out + &(&p.differentiate(i) * fi).scale(k);
        }
        out
    }

    /// `P~` at the scaled final time.
    pub fn at_end(&self, p: &Polynomial) -> Polynomial {
        let t_end = (self.horizon - self.map.offset[self.time]) / self.map.scale[self.time];
        p.fix_var(self.time, t_end)
    }

    /// Boundary target `g~ - P~(x~, t~_T)`.
    pub fn boundary(&self, p: &Polynomial) -> Polynomial {
        &self.g - &self.at_end(p)
    }

    pub fn dissipation_domains(&self) -> Vec<(String, Polynomial)> {
        let mut d = vec![("h_Omega".to_string(), self.h_omega.clone())];
        d.extend(self.h_inputs.iter().cloned());
        d.push(("h_T".to_string(), self.h_time.clone()));
        d
    }

    pub fn boundary_domains(&self) -> Vec<(String, Polynomial)> {
        vec![("h_Omega".to_string(), self.h_omega.clone())]
    }

    /// Integral of a polynomial over the scaled weight support.
    pub fn weighted_integral(&self, p: &Polynomial) -> Result<f64, PolyError> {
        let mut bounds = vec![(0.0, 1.0); self.nvars];
        bounds[..self.n].copy_from_slice(&self.lambda);
        match self.time_support {
            TimeSupport::Interval(a, b) => {
                bounds[self.time] = (a, b);
                p.integrate_box(&bounds)
            }
            TimeSupport::At(s) => p.fix_var(self.time, s).integrate_box(&bounds),
        }
    }
}

/// Smallest admissible degree: `max(deg g, deg c, 1 + deg f)`.
pub fn required_degree(spec: &OcpSpec) -> u32 {
    let df = spec.dynamics.iter().map(Polynomial::degree).max().unwrap_or(0);
    spec.terminal_cost
        .degree()
        .max(spec.running_cost.degree())
        .max(1 + df)
}

/// The compiled SOS program with the bookkeeping needed to read it back.
#[derive(Clone, Debug)]
pub struct CompiledProgram {
    pub sdp: SdpProblem,
    /// Basis of `P~` over states and time, graded-lex; free variable `k` is
    /// the coefficient of `p_basis[k]`.
    pub p_basis: MonomialBasis,
    pub boundary: SosConstraint,
    pub dissipation: SosConstraint,
    pub(crate) scaled: ScaledProblem,
}

/// Compiles the SOS tightening into an SDP.
pub fn build_sdp(spec: &OcpSpec, config: &SynthesisConfig) -> Result<CompiledProgram, HjbError> {
    spec.validate()?;
    config.validate(spec)?;
    let required = required_degree(spec);
    if config.degree < required {
        return Err(HjbError::DegreeTooLow {
            degree: config.degree,
            required,
        });
    }
    let scaled = ScaledProblem::new(spec, config)?;
    let nvars = scaled.nvars;
    let p_basis = MonomialBasis::over(&scaled.p_vars(), config.degree);
    let mut b = SdpBuilder::new();
    let first = b.add_free(p_basis.len());
    debug_assert_eq!(first, 0);

    // Objective: maximize alpha^T p, i.e. minimize -alpha^T p.
    for (k, m) in p_basis.entries().iter().enumerate() {
        let zk = Polynomial::from_terms(nvars, [(m.clone(), 1.0)]);
        let alpha = scaled.weighted_integral(&zk)?;
        if alpha != 0.0 {
            b.free_objective(k, -alpha);
        }
    }

    let margin = config.strict_margin;
    let mut boundary_target = AffinePoly::constant(scaled.g.add_constant(-margin));
    let mut dissipation_target = AffinePoly::constant(scaled.c.scale(scaled.time_scale()).add_constant(-margin));
    for (k, m) in p_basis.entries().iter().enumerate() {
        let zk = Polynomial::from_terms(nvars, [(m.clone(), 1.0)]);
        let bt = -&scaled.at_end(&zk);
        if !bt.is_zero() {
            boundary_target.linear.push((k, bt));
        }
        let dt = &scaled.dissipation(&zk) - &scaled.c.scale(scaled.time_scale());
        if !dt.is_zero() {
            dissipation_target.linear.push((k, dt));
        }
    }
    let boundary = compile_putinar(
        &mut b,
        "k0",
        &boundary_target,
        &scaled.boundary_domains(),
        &PutinarDegrees {
            min_degree: config.degree,
            multipliers: config.boundary_multipliers.clone(),
        },
    )?;
    let dissipation = compile_putinar(
        &mut b,
        "k1",
        &dissipation_target,
        &scaled.dissipation_domains(),
        &PutinarDegrees {
            min_degree: config.degree,
            multipliers: config.dissipation_multipliers.clone(),
        },
    )?;
    Ok(CompiledProgram {
        sdp: b.build(),
        p_basis,
        boundary,
        dissipation,
        scaled,
    })
}

/// A Gram matrix with its monomial basis (exponents over the universe).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GramRecord {
    pub label: String,
    pub basis: Vec<Vec<u32>>,
    /// Row-major upper triangle.
    pub upper: Vec<f64>,
}

impl GramRecord {
    fn new(label: &str, basis: &MonomialBasis, nvars: usize, q: &DMatrix<f64>) -> Self {
        let k = q.nrows();
        let mut upper = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            for j in i..k {
                upper.push(0.5 * (q[(i, j)] + q[(j, i)]));
            }
        }
        Self {
            label: label.to_string(),
            basis: basis.entries().iter().map(|m| m.to_exponents(nvars)).collect(),
            upper,
        }
    }

    pub fn matrix(&self) -> Result<DMatrix<f64>, HjbError> {
        let k = self.basis.len();
        if self.upper.len() != k * (k + 1) / 2 {
            return Err(HjbError::Certificate(format!("Gram block `{}` has the wrong size", self.label)));
        }
        let mut q = DMatrix::zeros(k, k);
        let mut it = self.upper.iter();
        for i in 0..k {
            for j in i..k {
                let v = *it.next().expect("length checked");
                q[(i, j)] = v;
                q[(j, i)] = v;
            }
        }
        Ok(q)
    }

    pub fn monomials(&self) -> Vec<Monomial> {
        self.basis.iter().map(|e| Monomial::from_exponents(e)).collect()
    }
}

/// A solved Putinar constraint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub label: String,
    pub matched_degree: u32,
    pub multipliers: Vec<GramRecord>,
    pub residual: GramRecord,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// A polynomial sub-value function with its SOS certificate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubValueCertificate {
    pub version: String,
    pub degree: u32,
    /// State names followed by `t`.
    pub variables: Vec<String>,
    /// Graded-lex basis over `(x, t)`, as exponent vectors.
    pub basis: Vec<Vec<u32>>,
    /// Coefficients of `P` in the original coordinates.
    pub coefficients: Vec<f64>,
    /// `alpha_i`: integral of the basis monomial against the weight.
    pub alpha: Vec<f64>,
    pub objective_value: f64,
    /// Map from scaled to original coordinates over the full universe.
    pub scaling: DomainMap,
    /// Coefficients of the scaled decision polynomial, the certificate's
    /// own variables.
    pub scaled_coefficients: Vec<f64>,
    pub input_normalization: InputNormalization,
    pub constraints: Vec<ConstraintRecord>,
    pub checks: Vec<ConstraintCheck>,
    pub solver: SolverSummary,
}

impl SubValueCertificate {
    fn basis_in(&self, nvars: usize, time: usize) -> Result<Vec<Monomial>, HjbError> {
        let k = self.variables.len();
        self.basis
            .iter()
            .map(|e| {
                if e.len() != k {
                    return Err(HjbError::Certificate("basis exponent length".into()));
                }
                Ok(Monomial::from_pairs(e.iter().enumerate().filter(|(_, &p)| p > 0).map(|(i, &p)| {
                    let v = if i + 1 == k { time } else { i };
                    (v, p)
                })))
            })
            .collect::<Result<_, _>>()
            .map(|v: Vec<Monomial>| {
                debug_assert!(v.iter().all(|m| m.max_var().is_none_or(|x| x < nvars)));
                v
            })
    }

    fn assemble(&self, spec: &OcpSpec, coefficients: &[f64]) -> Result<Polynomial, HjbError> {
        if self.variables.len() != spec.n_states() + 1 || coefficients.len() != self.basis.len() {
            return Err(HjbError::Certificate("certificate does not match the problem".into()));
        }
        let basis = self.basis_in(spec.nvars(), spec.time_index())?;
        Ok(Polynomial::from_terms(
            spec.nvars(),
            basis.into_iter().zip(coefficients.iter().copied()),
        ))
    }

    /// `P(x, t)` over the problem's universe.
    pub fn polynomial(&self, spec: &OcpSpec) -> Result<Polynomial, HjbError> {
        self.assemble(spec, &self.coefficients)
    }

    /// The scaled decision polynomial `P~`.
    pub fn scaled_polynomial(&self, spec: &OcpSpec) -> Result<Polynomial, HjbError> {
        self.assemble(spec, &self.scaled_coefficients)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HjbError> {
        serde_json::from_str(text).map_err(|e| HjbError::Certificate(e.to_string()))
    }
}

/// Result of [`synthesize`].
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub certificate: SubValueCertificate,
    pub solution: SdpSolution,
    pub program: CompiledProgram,
}

fn constraint_record(c: &SosConstraint, nvars: usize, blocks: &[DMatrix<f64>]) -> ConstraintRecord {
    ConstraintRecord {
        label: c.label.clone(),
        matched_degree: c.matched_degree,
        multipliers: c
            .multipliers
            .iter()
            .map(|m| GramRecord::new(&m.label, &m.gram.basis, nvars, &blocks[m.gram.block]))
            .collect(),
        residual: GramRecord::new("sigma", &c.residual.basis, nvars, &blocks[c.residual.block]),
    }
}

/// Builds and solves the SOS program and packages the certificate.
pub fn synthesize(spec: &OcpSpec, config: &SynthesisConfig, settings: &SolverSettings) -> Result<Synthesis, HjbError> {
    let program = build_sdp(spec, config)?;
    let sol = sdp::solve(&program.sdp, settings)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::PrimalInfeasible => {
            return Err(HjbError::Infeasible {
                degree: config.degree,
                status: sol.status,
            })
        }
        status => {
            return Err(HjbError::NotConverged {
                degree: config.degree,
                status,
                primal_residual: sol.primal_residual,
                gap: sol.gap,
            })
        }
    }
    let certificate = package(spec, config, &program, &sol)?;
    Ok(Synthesis {
        certificate,
        solution: sol,
        program,
    })
}

fn package(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    program: &CompiledProgram,
    sol: &SdpSolution,
) -> Result<SubValueCertificate, HjbError> {
    let nvars = spec.nvars();
    let scaled = &program.scaled;
    let np = program.p_basis.len();
    let p_scaled = Polynomial::from_terms(
        nvars,
        program.p_basis.entries().iter().cloned().zip(sol.free[..np].iter().copied()),
    );
    let p = scaled.map.to_original(&p_scaled)?;
    let (coefficients, rest) = p.coefficients_against(program.p_basis.entries());
    debug_assert!(rest.is_empty());

    // Moments in the original coordinates.
    let mut bounds = vec![(0.0, 1.0); nvars];
    bounds[..spec.n_states()].copy_from_slice(&config.lambda_box);
    let alpha: Vec<f64> = program
        .p_basis
        .entries()
        .iter()
        .map(|m| {
            let zk = Polynomial::from_terms(nvars, [(m.clone(), 1.0)]);
            match config.weight {
                Weight::Uniform => {
                    bounds[spec.time_index()] = (0.0, spec.horizon);
                    zk.integrate_box(&bounds)
                }
                Weight::Dirac { time } => zk.fix_var(spec.time_index(), time).integrate_box(&bounds),
            }
        })
        .collect::<Result<_, _>>()?;
    let objective_value = alpha.iter().zip(&coefficients).map(|(a, c)| a * c).sum();

    let time = spec.time_index();
    let to_pt = |m: &Monomial| {
        let mut e: Vec<u32> = (0..spec.n_states()).map(|i| m.exponent(i)).collect();
        e.push(m.exponent(time));
        e
    };
    let checks = vec![
        program.boundary.check(&sol.free, &sol.blocks),
        program.dissipation.check(&sol.free, &sol.blocks),
    ];
    let mut variables = spec.registry.states.clone();
    variables.push(spec.registry.time.clone());
    Ok(SubValueCertificate {
        version: CERTIFICATE_VERSION.to_string(),
        degree: config.degree,
        variables,
        basis: program.p_basis.entries().iter().map(to_pt).collect(),
        coefficients,
        alpha,
        objective_value,
        scaling: scaled.map.clone(),
        scaled_coefficients: sol.free[..np].to_vec(),
        input_normalization: scaled.normalization.clone(),
        constraints: vec![
            constraint_record(&program.boundary, nvars, &sol.blocks),
            constraint_record(&program.dissipation, nvars, &sol.blocks),
        ],
        checks,
        solver: SolverSummary {
            status: sol.status,
            primal_objective: sol.primal_objective,
            dual_objective: sol.dual_objective,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
            iterations: sol.iterations,
        },
    })
}

/// Labels of the Gram blocks in emission order, for diagnostics.
pub fn block_labels(program: &CompiledProgram) -> BTreeMap<usize, String> {
    let mut out = BTreeMap::new();
    for c in [&program.boundary, &program.dissipation] {
        for m in &c.multipliers {
            out.insert(m.gram.block, format!("{}:{}", c.label, m.label));
        }
        out.insert(c.residual.block, format!("{}:sigma", c.label));
    }
    out
}

#[cfg(test)]
mod tests;
