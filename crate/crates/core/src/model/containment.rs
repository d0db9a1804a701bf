//! Monte-Carlo check that trajectories started in `Lambda` stay in `Omega`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{OcpSpec, SynthesisConfig};
use crate::sim::{default_safety_box, simulate_schedule, IntegratorSettings, SimError, Trajectory};

/// Pieces of the random piecewise-constant input signal.
const INPUT_PIECES: usize = 10;
/// Integrator steps per sampled trajectory.
const STEPS: usize = 2_000;

/// Advisory result: sampling cannot prove containment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub samples: usize,
    pub contained: usize,
    pub fraction: f64,
    /// First escaping sample, by sample index.
    pub violation: Option<Violation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub sample: usize,
    pub x0: Vec<f64>,
    pub schedule: Vec<Vec<f64>>,
    pub exit_time: f64,
    pub exit_state: Vec<f64>,
    /// Trajectory up to and including the first node outside `Omega`.
    pub trajectory: Option<Trajectory>,
}

fn random_input(spec: &OcpSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bounds = spec.input_bounds();
    for _ in 0..10_000 {
        let u: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect();
        if spec.input_admissible(&u, 0.0) {
            return u;
        }
    }
    bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
}

fn run_sample(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    settings: &IntegratorSettings,
    seed: u64,
    index: usize,
) -> Result<Option<Violation>, SimError> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let x0: Vec<f64> = config
        .lambda_box
        .iter()
        .map(|&(lo, hi)| rng.random_range(lo..=hi))
        .collect();
    let schedule: Vec<Vec<f64>> = (0..INPUT_PIECES)
        .map(|_| random_input(spec, &mut rng))
        .collect();
    let escape = |t: f64, state: Vec<f64>, trajectory: Option<Trajectory>| Violation {
        sample: index,
        x0: x0.clone(),
        schedule: schedule.clone(),
        exit_time: t,
        exit_state: state,
        trajectory,
    };
    match simulate_schedule(spec, &schedule, &x0, settings) {
        Ok(mut traj) => {
            let mut z = vec![0.0; spec.nvars()];
            for k in 0..traj.states.len() {
                z[..x0.len()].copy_from_slice(&traj.states[k]);
                if !spec.omega.contains(&z) {
                    let (t, state) = (traj.times[k], traj.states[k].clone());
                    traj.times.truncate(k + 1);
                    traj.states.truncate(k + 1);
                    traj.inputs.truncate(k + 1);
                    return Ok(Some(escape(t, state, Some(traj))));
                }
            }
            Ok(None)
        }
        // Leaving the safety box or blowing up means leaving Omega.
        Err(SimError::EscapedSafetyBox { t, state }) => Ok(Some(escape(t, state, None))),
        Err(SimError::NonFinite(t)) => Ok(Some(escape(t, vec![f64::NAN; x0.len()], None))),
        Err(e) => Err(e),
    }
}

/// Simulates `samples` trajectories from uniform points of `Lambda` under
/// random piecewise-constant admissible inputs and reports the fraction that
/// stays in `Omega` on `[0, T]`.
pub fn check_containment_condition(
    spec: &OcpSpec,
    config: &SynthesisConfig,
    samples: usize,
    seed: u64,
) -> Result<ContainmentReport, SimError> {
    let settings = IntegratorSettings {
        safety_box: Some(default_safety_box(spec, &config.lambda_center())),
        ..IntegratorSettings::with_steps(STEPS)
    };
    let outcomes = (0..samples)
        .into_par_iter()
        .map(|i| run_sample(spec, config, &settings, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let violation = outcomes.iter().flatten().next().cloned();
    let contained = outcomes.iter().filter(|o| o.is_none()).count();
    Ok(ContainmentReport {
        samples,
        contained,
        fraction: if samples == 0 {
            1.0
        } else {
            contained as f64 / samples as f64
        },
        violation,
    })
}
