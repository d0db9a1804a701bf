mod manifest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use subvalue::hjb::HjbError;
use subvalue::model::ModelError;
use subvalue::reach::ReachError;
use subvalue::sdp::SdpError;
use subvalue::sim::SimError;

#[derive(Parser, Debug)]
#[command(name = "subvalue", version, about = "Certified polynomial sub-value functions for optimal control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the SOS program and write a certificate.
    Synthesize {
        config: String,
        #[arg(long)]
        degree: Option<u32>,
        /// Write the compiled SDP in SDPA sparse format.
        #[arg(long)]
        emit_sdpa: bool,
        /// Write the solver's per-iteration log.
        #[arg(long)]
        solver_log: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the feedback controller of a certificate, or a constant input.
    Simulate {
        config: String,
        #[arg(long)]
        certificate: Option<PathBuf>,
        /// Initial state, comma separated; defaults to the config's `x0`.
        #[arg(long)]
        x0: Option<String>,
        /// Open-loop input instead of feedback, e.g. `const:1`.
        #[arg(long)]
        input: Option<String>,
        /// Integration and Riemann-sum nodes.
        #[arg(long, default_value_t = 100_000)]
        riemann_n: usize,
        /// Accept a certificate made from a different config.
        #[arg(long)]
        force: bool,
        /// Reference value function for the performance bound (`ex1`).
        #[arg(long)]
        oracle: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// One synthesis per degree.
    Sweep {
        config: String,
        /// `a:step:b`.
        #[arg(long)]
        degrees: String,
        /// Reference value function for L1 and volume-metric errors (`ex1`).
        #[arg(long)]
        oracle: Option<String>,
        /// Also tabulate volume-metric distances of the sublevel sets at this level.
        #[arg(long)]
        level: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Outer approximation of a reachable set.
    Reach {
        config: String,
        #[arg(long)]
        degree: Option<u32>,
        /// Backward instead of forward.
        #[arg(long)]
        backward: bool,
        /// Lattice nodes per axis for the scalar-field export.
        #[arg(long, default_value_t = 41)]
        grid: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Forward reachable set of the scaled Lorenz system.
    Lorenz {
        #[arg(long, default_value_t = 4)]
        degree: u32,
        /// Initial points per axis inside the target ball.
        #[arg(long, default_value_t = 20)]
        grid: usize,
        /// RK4 steps per trajectory.
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Monte Carlo samples for checks and volumes.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol_feas: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol_gap: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Bad arguments or config; exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Ran to completion but nothing succeeded; carries its own code.
#[derive(Debug)]
pub struct Failed {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failed {}

fn classify_hjb(e: &HjbError) -> (u8, &'static str) {
    match e {
        HjbError::DegreeTooLow { .. } | HjbError::Infeasible { .. } => (3, "infeasible"),
        HjbError::NotConverged { .. } | HjbError::Sdp(_) => (4, "numerical"),
        HjbError::Model(_) | HjbError::Certificate(_) => (2, "config"),
        _ => (5, "internal"),
    }
}

fn classify_sim(e: &SimError) -> (u8, &'static str) {
    match e {
        SimError::EscapedSafetyBox { .. } | SimError::NonFinite(_) => (4, "numerical"),
        SimError::Invalid(_) | SimError::NotABox | SimError::NotInputAffine(_) | SimError::OracleUnavailable => {
            (2, "config")
        }
        _ => (5, "internal"),
    }
}

/// Exit code and error kind: 2 usage/config, 3 infeasible, 4 numerical, 5 internal.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failed>() {
            return (f.code, f.kind);
        }
        if cause.is::<Usage>() || cause.is::<ModelError>() || cause.is::<serde_json::Error>() {
            return (2, "config");
        }
        if let Some(e) = cause.downcast_ref::<HjbError>() {
            return classify_hjb(e);
        }
        if let Some(e) = cause.downcast_ref::<SimError>() {
            return classify_sim(e);
        }
        if let Some(e) = cause.downcast_ref::<ReachError>() {
            return match e {
                ReachError::Synthesis(h) => classify_hjb(h),
                ReachError::Simulation(s) => classify_sim(s),
                _ => (2, "config"),
            };
        }
        if cause.is::<SdpError>() {
            return (4, "numerical");
        }
    }
    (5, "internal")
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SUBVALUE_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Usage(format!("SUBVALUE_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synthesize {
            config,
            degree,
            emit_sdpa,
            solver_log,
            common,
        } => run::synthesize(&config, degree, emit_sdpa, solver_log, &common),
        Command::Simulate {
            config,
            certificate,
            x0,
            input,
            riemann_n,
            force,
            oracle,
            common,
        } => run::simulate(
            &config,
            &run::SimulateArgs {
                certificate,
                x0,
                input,
                riemann_n,
                force,
                oracle,
            },
            &common,
        ),
        Command::Sweep {
            config,
            degrees,
            oracle,
            level,
            common,
        } => run::sweep(&config, &degrees, oracle.as_deref(), level, &common),
        Command::Reach {
            config,
            degree,
            backward,
            grid,
            common,
        } => run::reach(&config, degree, backward, grid, &common),
        Command::Lorenz {
            degree,
            grid,
            steps,
            common,
        } => run::lorenz(degree, grid, steps, &common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let mut body = serde_json::json!({
                "error": kind,
                "message": format!("{err:#}"),
                "exit_code": code,
            });
            if code == 3 {
                body["diagnosis"] = "raise degree".into();
            }
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
