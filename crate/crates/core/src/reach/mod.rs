//! Reachable-set outer approximations from sub-value sublevel sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hjb::{degree_sweep, synthesize, ConvergenceStudy, HjbError, SubValueCertificate, SweepOptions};
use crate::model::{InputSet, OcpSpec, SemialgebraicSet, SynthesisConfig, VariableRegistry, Weight};
use crate::sdp::SolverSettings;
use crate::sim::{flow, SimError, ValueOracle};
use crate::Polynomial;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("at least one sample is required")]
    ZeroSamples,
    #[error("running cost must be identically zero for reachability")]
    RunningCost,
    #[error("sets live in different domains")]
    DomainMismatch,
    #[error(transparent)]
    Synthesis(#[from] HjbError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Anything with a membership test over a state box.
pub trait Region: Sync {
    fn contains(&self, x: &[f64]) -> bool;
}

/// `{x in domain : V(x, s) <= level}`, or `< level` when `strict`.
///
/// The two differ only on `{V = level}`, a null set unless `V` is constant on
/// a set of positive measure.
#[derive(Clone, Debug)]
pub struct SublevelSet {
    /// Polynomial over the problem's `(x, u, t)` variables; inputs are ignored.
    pub polynomial: Polynomial,
    pub n_states: usize,
    pub time: f64,
    pub level: f64,
    pub domain: Vec<(f64, f64)>,
    pub strict: bool,
}

impl SublevelSet {
    pub fn value(&self, x: &[f64]) -> f64 {
        let mut z = vec![0.0; self.polynomial.nvars()];
        z[..self.n_states].copy_from_slice(x);
        z[self.polynomial.nvars() - 1] = self.time;
        self.polynomial.eval(&z)
    }

    pub fn with_strict(&self, strict: bool) -> Self {
        Self {
            strict,
            ..self.clone()
        }
    }
}

impl Region for SublevelSet {
    fn contains(&self, x: &[f64]) -> bool {
        let v = self.value(x);
        if self.strict {
            v < self.level
        } else {
            v <= self.level
        }
    }
}

/// An axis-aligned open box.
#[derive(Clone, Debug)]
pub struct BoxRegion(pub Vec<(f64, f64)>);

impl Region for BoxRegion {
    fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.0).all(|(v, (a, b))| a < v && v < b)
    }
}

/// `{x : f(x) <= level}` or `{x : f(x) < level}` for an arbitrary function.
pub struct FunctionSublevel<F> {
    pub function: F,
    pub level: f64,
    pub strict: bool,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Region for FunctionSublevel<F> {
    fn contains(&self, x: &[f64]) -> bool {
        let v = (self.function)(x);
        if self.strict {
            v < self.level
        } else {
            v <= self.level
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    pub samples: usize,
    pub standard_error: f64,
    pub seed: u64,
}

const CHUNK: usize = 4096;

/// Fraction of uniform samples of `domain` accepted by `hit`. Chunks draw
/// from independent ChaCha streams so the count does not depend on threads.
fn mc_fraction<H>(domain: &[(f64, f64)], samples: usize, seed: u64, hit: H) -> Result<VolumeEstimate, ReachError>
where
    H: Fn(&[f64]) -> bool + Sync,
{
    if samples == 0 {
        return Err(ReachError::ZeroSamples);
    }
    let chunks = samples.div_ceil(CHUNK);
    let count: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = CHUNK.min(samples - c * CHUNK);
            let mut x = vec![0.0; domain.len()];
            let mut hits = 0;
            for _ in 0..len {
                for (xi, &(a, b)) in x.iter_mut().zip(domain) {
                    *xi = a + (b - a) * rng.random::<f64>();
                }
                hits += hit(&x) as usize;
            }
            hits
        })
        .sum();
    let vol: f64 = domain.iter().map(|(a, b)| b - a).product();
    let p = count as f64 / samples as f64;
    Ok(VolumeEstimate {
        value: p * vol,
        samples,
        standard_error: (p * (1.0 - p) / samples as f64).sqrt() * vol,
        seed,
    })
}

/// Monte Carlo volume of `a` inside `domain`.
pub fn volume(a: &dyn Region, domain: &[(f64, f64)], samples: usize, seed: u64) -> Result<VolumeEstimate, ReachError> {
    mc_fraction(domain, samples, seed, |x| a.contains(x))
}

/// Monte Carlo estimate of the volume metric `mu(A \ B  u  B \ A)` over `domain`.
pub fn volume_metric(
    a: &dyn Region,
    b: &dyn Region,
    domain: &[(f64, f64)],
    samples: usize,
    seed: u64,
) -> Result<VolumeEstimate, ReachError> {
    mc_fraction(domain, samples, seed, |x| a.contains(x) != b.contains(x))
}

/// [`volume_metric`] for two sublevel sets, which must share their domain.
pub fn sublevel_distance(
    a: &SublevelSet,
    b: &SublevelSet,
    samples: usize,
    seed: u64,
) -> Result<VolumeEstimate, ReachError> {
    if a.domain != b.domain {
        return Err(ReachError::DomainMismatch);
    }
    volume_metric(a, b, &a.domain, samples, seed)
}

#[derive(Clone, Debug)]
pub struct ReachResult {
    /// `{x : P(x, 0) < 0}` over `Lambda`.
    pub set: SublevelSet,
    pub certificate: SubValueCertificate,
}

/// Outer approximation `{x : P(x, 0) < 0}` of the states that can be steered
/// into `{g < 0}` at time `T`.
pub fn backward_reach_outer(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    settings: &SolverSettings,
) -> Result<ReachResult, ReachError> {
    if !spec.running_cost.is_zero() {
        return Err(ReachError::RunningCost);
    }
    let certificate = synthesize(spec, config, settings)?.certificate;
    let set = SublevelSet {
        polynomial: certificate.polynomial(spec)?,
        n_states: spec.n_states(),
        time: 0.0,
        level: 0.0,
        domain: config.lambda_box.clone(),
        strict: true,
    };
    Ok(ReachResult { set, certificate })
}

/// Outer approximation of the states reachable from `{g < 0}` at time `T`:
/// the backward set of the reversed dynamics.
pub fn forward_reach_outer(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    settings: &SolverSettings,
) -> Result<ReachResult, ReachError> {
    backward_reach_outer(&spec.reversed(), config, settings)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub beta: f64,
    pub rho: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            beta: 8.0 / 3.0,
            rho: 28.0,
        }
    }
}

/// Lorenz system in coordinates `x = (y - (0, 0, 25)) / 50` with time sped
/// up 50 times, with target ball `X0` of radius 0.1 around `(-0.6, 0.6, 0.2)`.
pub fn lorenz_problem(params: LorenzParams, degree: u32) -> (OcpSpec, SynthesisConfig) {
    let LorenzParams { sigma, beta, rho } = params;
    let v = |i| Polynomial::var(4, i);
    let (x1, x2, x3) = (v(0), v(1), v(2));
    let f1 = (&x2 - &x1).scale(50.0 * sigma);
    let f2 = &(&x1.scale(50.0 * (rho - 25.0)) - &(&x1 * &x3).scale(2500.0)) - &x2.scale(50.0);
    let f3 = (&(&x1 * &x2).scale(2500.0) - &x3.scale(50.0 * beta)).add_constant(-25.0 * beta);
    let g = [(0, -0.6), (1, 0.6), (2, 0.2)]
        .iter()
        .fold(Polynomial::constant(4, -0.01), |acc, &(i, c)| &acc + &v(i).add_constant(-c).pow(2));
    let omega = (0..3).fold(Polynomial::constant(4, 1.0), |acc, i| &acc - &v(i).pow(2));
    let spec = OcpSpec {
        registry: VariableRegistry::new(vec!["x1".into(), "x2".into(), "x3".into()], vec![]).expect("fixed names"),
        running_cost: Polynomial::zero(4),
        terminal_cost: g,
        dynamics: vec![f1, f2, f3],
        omega: SemialgebraicSet::new(omega),
        inputs: InputSet::Empty,
        horizon: 0.5,
    };
    let config = SynthesisConfig::new(
        vec![(-0.4, 0.4), (-0.5, 0.5), (-0.4, 0.6)],
        Weight::Dirac { time: 0.0 },
        degree,
    );
    (spec, config)
}

#[derive(Clone, Debug)]
pub struct LorenzReport {
    pub reach: ReachResult,
    /// Grid points inside `X0`.
    pub starts: Vec<Vec<f64>>,
    /// States at `T` under the forward dynamics.
    pub endpoints: Vec<Vec<f64>>,
    /// Fraction of `starts` with `P(x, 0) < 0`.
    pub start_fraction: f64,
    /// Fraction of `endpoints` with `P(x, 0) < 0`; one for a valid certificate.
    pub endpoint_fraction: f64,
}

/// `k^3` cell-centred grid on the cube inscribed in the ball `|x - c| < r`.
pub fn ball_grid(center: &[f64], radius: f64, k: usize) -> Vec<Vec<f64>> {
    let half = radius / (center.len() as f64).sqrt();
    let mut out = vec![Vec::new()];
    for &c in center {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |i| {
                    let mut q = p.clone();
                    q.push(c - half + 2.0 * half * (i as f64 + 0.5) / k as f64);
                    q
                })
            })
            .collect();
    }
    out
}

/// Synthesizes the forward outer set of the scaled Lorenz system and checks
/// it against `k^3` trajectories started in `X0`, integrated with `steps`
/// RK4 steps.
pub fn lorenz_pipeline(
    params: LorenzParams,
    degree: u32,
    k: usize,
    settings: &SolverSettings,
    steps: usize,
) -> Result<LorenzReport, ReachError> {
    let (spec, config) = lorenz_problem(params, degree);
    let reach = forward_reach_outer(&spec, &config, settings)?;
    let starts = ball_grid(&[-0.6, 0.6, 0.2], 0.1, k);
    let endpoints = starts
        .par_iter()
        .map(|x0| Ok(flow(&spec, &[], x0, steps)?))
        .collect::<Result<Vec<_>, ReachError>>()?;
    let fraction = |pts: &[Vec<f64>]| pts.iter().filter(|x| reach.set.contains(x)).count() as f64 / pts.len().max(1) as f64;
    Ok(LorenzReport {
        start_fraction: fraction(&starts),
        endpoint_fraction: fraction(&endpoints),
        reach,
        starts,
        endpoints,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SublevelRow {
    pub degree: u32,
    pub status: String,
    pub distance: Option<VolumeEstimate>,
    pub strict_distance: Option<VolumeEstimate>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SublevelStudy {
    pub level: f64,
    pub time: f64,
    pub reference: String,
    pub rows: Vec<SublevelRow>,
}

impl SublevelStudy {
    /// `degree,status,dv,dv_se,dv_strict,dv_strict_se` table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("degree,status,dv,dv_se,dv_strict,dv_strict_se\n");
        let cell = |e: &Option<VolumeEstimate>| match e {
            Some(e) => format!("{:.6e},{:.6e}", e.value, e.standard_error),
            None => ",".into(),
        };
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.degree, r.status, cell(&r.distance), cell(&r.strict_distance)));
        }
        out
    }
}

/// Volume-metric distance between `{V_ref(., s) <= level}` and
/// `{P_d(., s) <= level}` per degree, with common random numbers. Without an
/// oracle the highest successful degree is the reference.
#[allow(clippy::too_many_arguments)]
pub fn sublevel_convergence_study(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    degrees: &[u32],
    level: f64,
    time: f64,
    oracle: Option<&dyn ValueOracle>,
    samples: usize,
    seed: u64,
    opts: &SweepOptions,
) -> Result<SublevelStudy, ReachError> {
    if samples == 0 {
        return Err(ReachError::ZeroSamples);
    }
    let sweep = degree_sweep(spec, config, degrees, None, opts);
    sublevel_distances(spec, config, &sweep, level, time, oracle, samples, seed)
}

/// [`sublevel_convergence_study`] over the certificates of an existing sweep.
#[allow(clippy::too_many_arguments)]
pub fn sublevel_distances(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    sweep: &ConvergenceStudy,
    level: f64,
    time: f64,
    oracle: Option<&dyn ValueOracle>,
    samples: usize,
    seed: u64,
) -> Result<SublevelStudy, ReachError> {
    if samples == 0 {
        return Err(ReachError::ZeroSamples);
    }
    let n = spec.n_states();
    let sets: Vec<Option<SublevelSet>> = sweep
        .records
        .iter()
        .map(|r| {
            let p = r.certificate.as_ref()?.polynomial(spec).ok()?;
            Some(SublevelSet {
                polynomial: p,
                n_states: n,
                time,
                level,
                domain: config.lambda_box.clone(),
                strict: false,
            })
        })
        .collect();
    let fallback = sets
        .iter()
        .zip(&sweep.records)
        .filter_map(|(s, r)| s.as_ref().map(|s| (r.degree, s)))
        .max_by_key(|(d, _)| *d);
    let (reference, name): (Box<dyn Fn(&[f64]) -> f64 + Sync + '_>, String) = match (oracle, fallback) {
        (Some(o), _) => (Box::new(move |x: &[f64]| o.value(x, time)), o.name()),
        (None, Some((d, s))) => (Box::new(move |x: &[f64]| s.value(x)), format!("degree-{d} solution")),
        (None, None) => (Box::new(|_: &[f64]| f64::NAN), "none".into()),
    };
    let mut rows = Vec::new();
    for (r, set) in sweep.records.iter().zip(&sets) {
        let (distance, strict_distance) = match set {
            Some(s) => {
                let dist = |strict: bool| {
                    let refset = FunctionSublevel {
                        function: &reference,
                        level,
                        strict,
                    };
                    volume_metric(&refset, &s.with_strict(strict), &config.lambda_box, samples, seed)
                };
                (Some(dist(false)?), Some(dist(true)?))
            }
            None => (None, None),
        };
        rows.push(SublevelRow {
            degree: r.degree,
            status: r.status.clone(),
            distance,
            strict_distance,
        });
    }
    Ok(SublevelStudy {
        level,
        time,
        reference: name,
        rows,
    })
}

/// `count` uniform points of `domain`.
pub fn sample_box(domain: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| domain.iter().map(|&(a, b)| a + (b - a) * rng.random::<f64>()).collect())
        .collect()
}

/// Lipschitz family on `(0, 1)` whose strict 1-sublevel sets stay 0.25 away
/// from the limit's while the non-strict ones coincide with it.
pub mod counterexample {
    /// The limit: 0 up to 0.25, slope 2 to 0.75, then 1.
    pub fn limit(x: f64) -> f64 {
        if x <= 0.25 {
            0.0
        } else if x < 0.75 {
            2.0 * (x - 0.25)
        } else {
            1.0
        }
    }

    /// Same as [`limit`] except `1 - 1/d` on `[0.75, 1)`.
    pub fn member(d: u32, x: f64) -> f64 {
        if x >= 0.75 {
            1.0 - 1.0 / d as f64
        } else {
            limit(x)
        }
    }

    pub const LEVEL: f64 = 1.0;
    pub const DOMAIN: [(f64, f64); 1] = [(0.0, 1.0)];
}

/// `(strict, non-strict)` volume-metric distances between the level-1 sets
/// of [`counterexample::member`] and [`counterexample::limit`].
pub fn counterexample_distances(d: u32, samples: usize, seed: u64) -> Result<(VolumeEstimate, VolumeEstimate), ReachError> {
    let dist = |strict| {
        let a = FunctionSublevel {
            function: |x: &[f64]| counterexample::limit(x[0]),
            level: counterexample::LEVEL,
            strict,
        };
        let b = FunctionSublevel {
            function: |x: &[f64]| counterexample::member(d, x[0]),
            level: counterexample::LEVEL,
            strict,
        };
        volume_metric(&a, &b, &counterexample::DOMAIN, samples, seed)
    };
    Ok((dist(true)?, dist(false)?))
}

/// `x1,...,xn,inside` rows.
pub fn point_cloud_csv(names: &[&str], points: &[Vec<f64>], region: &dyn Region) -> String {
    let mut out = names.join(",");
    out.push_str(",inside\n");
    for p in points {
        for v in p {
            out.push_str(&format!("{v:.9e},"));
        }
        out.push_str(if region.contains(p) { "1\n" } else { "0\n" });
    }
    out
}

/// Lattice of `V(x, s)` with `k` nodes per axis over the set's domain, first
/// coordinate fastest, as `x1,...,xn,value` rows.
pub fn scalar_field_csv(names: &[&str], set: &SublevelSet, k: usize) -> String {
    let mut out = names.join(",");
    out.push_str(",value\n");
    let n = set.domain.len();
    let total = k.pow(n as u32);
    let rows: Vec<String> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let x: Vec<f64> = set
                .domain
                .iter()
                .map(|&(a, b)| {
                    let i = idx % k;
                    idx /= k;
                    if k == 1 {
                        0.5 * (a + b)
                    } else {
                        a + (b - a) * i as f64 / (k - 1) as f64
                    }
                })
                .collect();
            let mut row = String::new();
            for v in &x {
                row.push_str(&format!("{v:.9e},"));
            }
            row.push_str(&format!("{:.9e}\n", set.value(&x)));
            row
        })
        .collect();
    out.extend(rows);
    out
}

#[cfg(test)]
mod tests;
