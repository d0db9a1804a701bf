use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use subvalue::hjb::{
    build_sdp, degree_sweep, synthesize as solve, verify_certificate, ConvergenceStudy, SubValueCertificate,
    SweepOptions, VerificationReport,
};
use subvalue::model::{parse_problem, preset, serialize_problem, Problem};
use subvalue::reach::{
    backward_reach_outer, forward_reach_outer, lorenz_pipeline, lorenz_problem, point_cloud_csv, sample_box,
    scalar_field_csv, sublevel_distances, volume, LorenzParams, VolumeEstimate,
};
use subvalue::sdp::{write_sdpa, SolverSettings};
use subvalue::sim::{
    cost, extract_argmin, extract_bangbang, performance_bound, simulate as integrate, BoundRequest, Controller,
    Ex1Oracle, IntegratorSettings, PerformanceReport, ValueOracle,
};

use crate::manifest::{sha256_hex, RunManifest};
use crate::{Common, Failed, Usage};

const VERIFY_TOL: f64 = 1e-6;

struct Loaded {
    problem: Problem,
    source: String,
    sha256: String,
}

/// A config path, or the name of a bundled example (`ex1` .. `ex4`).
fn load(arg: &str) -> Result<Loaded> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).with_context(|| format!("reading {arg}"))?
    } else if let Some(text) = preset(arg) {
        text.to_string()
    } else {
        return Err(Usage(format!("config not found: {arg}")).into());
    };
    let problem = parse_problem(&text).with_context(|| format!("parsing {arg}"))?;
    Ok(Loaded {
        problem,
        source: arg.to_string(),
        sha256: sha256_hex(text.as_bytes()),
    })
}

fn settings(common: &Common) -> SolverSettings {
    SolverSettings {
        tol_feas: common.tol_feas,
        tol_gap: common.tol_gap,
        max_iter: common.max_iter,
        ..SolverSettings::default()
    }
}

fn start(common: &Common, loaded: Option<&Loaded>) -> Result<RunManifest> {
    let mut m = RunManifest::start(&common.out, common.seed, &settings(common))?;
    if let Some(l) = loaded {
        m.config = Some(l.source.clone());
        m.config_sha256 = Some(l.sha256.clone());
    }
    Ok(m)
}

/// Certificate plus the hash of the config it was solved from.
#[derive(Serialize, Deserialize)]
struct CertificateFile {
    config_sha256: String,
    certificate: SubValueCertificate,
}

fn state_names(problem: &Problem) -> Vec<&str> {
    problem.spec.registry.states.iter().map(String::as_str).collect()
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Usage(format!("{what}: `{v}` is not a number")).into()))
        .collect()
}

fn oracle_for(name: Option<&str>, problem: &Problem) -> Result<Option<Box<dyn ValueOracle>>> {
    match name {
        None => Ok(None),
        Some("ex1") if problem.spec.n_states() == 1 => Ok(Some(Box::new(Ex1Oracle {
            horizon: problem.spec.horizon,
        }))),
        Some(other) => Err(Usage(format!("no oracle `{other}` for this problem")).into()),
    }
}

#[derive(Serialize)]
struct SynthesisSummary<'a> {
    degree: u32,
    objective: f64,
    solver: &'a subvalue::hjb::SolverSummary,
    verification: &'a VerificationReport,
}

pub fn synthesize(config: &str, degree: Option<u32>, emit_sdpa: bool, solver_log: bool, common: &Common) -> Result<()> {
    let loaded = load(config)?;
    let mut manifest = start(common, Some(&loaded))?;
    let spec = &loaded.problem.spec;
    let mut cfg = loaded.problem.config.clone();
    if let Some(d) = degree {
        cfg.degree = d;
    }
    if emit_sdpa {
        let program = build_sdp(spec, &cfg)?;
        let mut buf = Vec::new();
        write_sdpa(&program.sdp, &mut buf)?;
        manifest.write("program.dat-s", buf)?;
    }
    let clock = Instant::now();
    let synthesis = solve(spec, &cfg, &settings(common))?;
    let solve_time = clock.elapsed().as_secs_f64();
    manifest.timings.push(("solve_s".into(), solve_time));
    let cert = synthesis.certificate;
    let report = verify_certificate(spec, &cfg, &cert, VERIFY_TOL, common.samples, common.seed)?;
    if solver_log {
        manifest.write("solver_log.csv", synthesis.solution.log_csv())?;
    }
    manifest.write_json(
        "summary.json",
        &SynthesisSummary {
            degree: cfg.degree,
            objective: cert.objective_value,
            solver: &cert.solver,
            verification: &report,
        },
    )?;
    let path = manifest.write_json(
        "certificate.json",
        &CertificateFile {
            config_sha256: loaded.sha256.clone(),
            certificate: cert.clone(),
        },
    )?;
    println!("degree       {}", cfg.degree);
    println!("objective    {:.10e}", cert.objective_value);
    println!(
        "solver       {:?} in {} iterations, gap {:.2e}",
        cert.solver.status, cert.solver.iterations, cert.solver.gap
    );
    println!("min eig      {:.3e}", report.min_eigenvalue);
    println!("identity     {:.3e}", report.max_relative_identity_residual);
    println!("dissipation  {:.3e} (sampled min)", report.sampled_dissipation_min);
    println!("boundary     {:.3e} (sampled min)", report.sampled_boundary_min);
    println!("verified     {}", report.passed);
    println!("wall time    {solve_time:.3} s");
    println!("certificate  {}", path.display());
    manifest.finish()
}

pub struct SimulateArgs {
    pub certificate: Option<PathBuf>,
    pub x0: Option<String>,
    pub input: Option<String>,
    pub riemann_n: usize,
    pub force: bool,
    pub oracle: Option<String>,
}

#[derive(Serialize)]
struct SimulationReport {
    controller: String,
    x0: Vec<f64>,
    riemann_n: usize,
    realized_cost: f64,
    final_state: Vec<f64>,
    performance: Option<PerformanceReport>,
}

fn read_certificate(path: &Path, loaded: &Loaded, force: bool) -> Result<SubValueCertificate> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: CertificateFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.config_sha256 != loaded.sha256 && !force {
        return Err(Usage(format!(
            "certificate {} was solved from a different config (hash {}); pass --force to use it anyway",
            path.display(),
            file.config_sha256
        ))
        .into());
    }
    Ok(file.certificate)
}

pub fn simulate(config: &str, args: &SimulateArgs, common: &Common) -> Result<()> {
    let loaded = load(config)?;
    let problem = &loaded.problem;
    let spec = &problem.spec;
    let x0 = match (&args.x0, &problem.x0) {
        (Some(text), _) => parse_list(text, "--x0")?,
        (None, Some(x)) => x.clone(),
        (None, None) => return Err(Usage("no initial state: pass --x0 or set x0 in the config".into()).into()),
    };
    if x0.len() != spec.n_states() {
        return Err(Usage(format!("--x0 needs {} entries", spec.n_states())).into());
    }
    let mut manifest = start(common, Some(&loaded))?;
    let mut feedback = None;
    let (controller, label) = match &args.input {
        Some(text) => {
            let values = text
                .strip_prefix("const:")
                .ok_or_else(|| Usage(format!("--input must look like const:v1,v2, got `{text}`")))?;
            let u = parse_list(values, "--input")?;
            if u.len() != spec.m_inputs() {
                return Err(Usage(format!("--input needs {} values", spec.m_inputs())).into());
            }
            (Controller::Constant(u), format!("constant {values}"))
        }
        None => {
            let path = args
                .certificate
                .as_ref()
                .ok_or_else(|| Usage("pass --certificate or --input".into()))?;
            let cert = read_certificate(path, &loaded, args.force)?;
            let p = cert.polynomial(spec)?;
            let (c, label) = match extract_bangbang(spec, &p) {
                Ok(c) => (c, "bang-bang"),
                Err(_) => (extract_argmin(spec, &p, 101)?, "sampled argmin"),
            };
            feedback = Some(p);
            (c, label.to_string())
        }
    };
    let traj = integrate(spec, &controller, &x0, 0.0, &IntegratorSettings::with_steps(args.riemann_n))?;
    let realized = cost(spec, &traj);
    let oracle = oracle_for(args.oracle.as_deref(), problem)?;
    let performance = match (&feedback, &oracle) {
        (Some(p), Some(o)) => {
            let omega_box = spec.omega_bounds(&problem.config.lambda_center());
            Some(performance_bound(
                spec,
                p,
                Some(o.as_ref()),
                BoundRequest {
                    x0: &x0,
                    realized_cost: realized,
                    reference_costs: BTreeMap::new(),
                    omega_box: &omega_box,
                    grid: 201,
                },
            )?)
        }
        _ => None,
    };
    manifest.write("trajectory.csv", traj.to_csv(spec))?;
    manifest.write_json(
        "report.json",
        &SimulationReport {
            controller: label.clone(),
            x0: x0.clone(),
            riemann_n: args.riemann_n,
            realized_cost: realized,
            final_state: traj.final_state().to_vec(),
            performance: performance.clone(),
        },
    )?;
    println!("controller  {label}");
    println!("cost        {realized:.10}");
    if let Some(p) = performance {
        println!("loss        {:.3e}", p.loss_estimate);
        println!("bound       {:.3e} (C = {:.3})", p.bound_value, p.bound_c);
    }
    manifest.finish()
}

/// `a:step:b`, `a:b` (step 1) or a single degree.
pub fn parse_degrees(text: &str) -> Result<Vec<u32>> {
    let parts: Vec<u32> = text
        .split(':')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| Usage(format!("--degrees must look like a:step:b, got `{text}`")))?;
    let (a, step, b) = match parts[..] {
        [a] => (a, 1, a),
        [a, b] => (a, 1, b),
        [a, s, b] => (a, s, b),
        _ => return Err(Usage(format!("--degrees must look like a:step:b, got `{text}`")).into()),
    };
    if step == 0 || a > b {
        return Err(Usage(format!("--degrees `{text}` is empty")).into());
    }
    Ok((a..=b).step_by(step as usize).collect())
}

fn sweep_failure(study: &ConvergenceStudy) -> Failed {
    let structural = study
        .records
        .iter()
        .all(|r| r.status == "degree_too_low" || r.status == "infeasible");
    let message = study
        .records
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("d={}: {e}", r.degree)))
        .collect::<Vec<_>>()
        .join("; ");
    if structural {
        Failed {
            code: 3,
            kind: "infeasible",
            message,
        }
    } else {
        Failed {
            code: 4,
            kind: "numerical",
            message,
        }
    }
}

pub fn sweep(config: &str, degrees: &str, oracle: Option<&str>, level: Option<f64>, common: &Common) -> Result<()> {
    let loaded = load(config)?;
    let degrees = parse_degrees(degrees)?;
    let oracle = oracle_for(oracle, &loaded.problem)?;
    let mut manifest = start(common, Some(&loaded))?;
    let problem = &loaded.problem;
    let opts = SweepOptions {
        settings: settings(common),
        ..SweepOptions::default()
    };
    let study = degree_sweep(&problem.spec, &problem.config, &degrees, oracle.as_deref(), &opts);
    for r in &study.records {
        manifest.timings.push((format!("degree_{}_s", r.degree), r.wall_time_s));
    }
    manifest.write("sweep.csv", study.to_csv())?;
    print!("{}", study.to_csv());
    if let Some(level) = level {
        let table = sublevel_distances(
            &problem.spec,
            &problem.config,
            &study,
            level,
            0.0,
            oracle.as_deref(),
            common.samples,
            common.seed,
        )?;
        manifest.write("sublevel.csv", table.to_csv())?;
        println!("reference: {}", table.reference);
        print!("{}", table.to_csv());
    }
    if !study.objective_monotone(1e-7) {
        eprintln!("warning: objective is not monotone in the degree");
    }
    let any_ok = study.records.iter().any(|r| r.status == "optimal");
    manifest.finish()?;
    if any_ok {
        Ok(())
    } else {
        Err(sweep_failure(&study).into())
    }
}

#[derive(Serialize)]
struct ReachSummary {
    direction: &'static str,
    degree: u32,
    objective: f64,
    level: f64,
    strict: bool,
    volume: VolumeEstimate,
    verification: VerificationReport,
}

pub fn reach(config: &str, degree: Option<u32>, backward: bool, grid: usize, common: &Common) -> Result<()> {
    let loaded = load(config)?;
    let mut manifest = start(common, Some(&loaded))?;
    let problem = &loaded.problem;
    let mut cfg = problem.config.clone();
    if let Some(d) = degree {
        cfg.degree = d;
    }
    let settings = settings(common);
    let (res, solved) = if backward {
        (backward_reach_outer(&problem.spec, &cfg, &settings)?, problem.spec.clone())
    } else {
        (forward_reach_outer(&problem.spec, &cfg, &settings)?, problem.spec.reversed())
    };
    let report = verify_certificate(&solved, &cfg, &res.certificate, VERIFY_TOL, common.samples, common.seed)?;
    let names = state_names(problem);
    let vol = volume(&res.set, &cfg.lambda_box, common.samples, common.seed)?;
    let cloud = sample_box(&cfg.lambda_box, common.samples, common.seed);
    manifest.write("points.csv", point_cloud_csv(&names, &cloud, &res.set))?;
    manifest.write("field.csv", scalar_field_csv(&names, &res.set, grid))?;
    manifest.write_json(
        "certificate.json",
        &CertificateFile {
            config_sha256: loaded.sha256.clone(),
            certificate: res.certificate.clone(),
        },
    )?;
    let summary = ReachSummary {
        direction: if backward { "backward" } else { "forward" },
        degree: cfg.degree,
        objective: res.certificate.objective_value,
        level: res.set.level,
        strict: res.set.strict,
        volume: vol,
        verification: report,
    };
    manifest.write_json("summary.json", &summary)?;
    println!("{} outer set {{P(x, 0) < 0}}, degree {}", summary.direction, cfg.degree);
    println!("volume     {:.6} +- {:.1e} of {:.6}", vol.value, vol.standard_error, cfg.lambda_volume());
    println!("verified   {}", summary.verification.passed);
    manifest.finish()
}

#[derive(Serialize)]
struct LorenzSummary {
    degree: u32,
    objective: f64,
    grid: usize,
    steps: usize,
    start_fraction: f64,
    endpoint_fraction: f64,
    verification: VerificationReport,
}

pub fn lorenz(degree: u32, grid: usize, steps: usize, common: &Common) -> Result<()> {
    let mut manifest = start(common, None)?;
    let params = LorenzParams::default();
    let (spec, cfg) = lorenz_problem(params, degree);
    let problem_text = serialize_problem(&Problem {
        spec: spec.reversed(),
        config: cfg.clone(),
        x0: None,
    });
    manifest.config_sha256 = Some(sha256_hex(problem_text.as_bytes()));
    let clock = Instant::now();
    let report = lorenz_pipeline(params, degree, grid, &settings(common), steps)?;
    manifest.timings.push(("pipeline_s".into(), clock.elapsed().as_secs_f64()));
    let verification = verify_certificate(
        &spec.reversed(),
        &cfg,
        &report.reach.certificate,
        VERIFY_TOL,
        common.samples,
        common.seed,
    )?;
    let names = ["x1", "x2", "x3"];
    let set = &report.reach.set;
    manifest.write("problem.json", &problem_text)?;
    manifest.write("starts.csv", point_cloud_csv(&names, &report.starts, set))?;
    manifest.write("endpoints.csv", point_cloud_csv(&names, &report.endpoints, set))?;
    manifest.write("field.csv", scalar_field_csv(&names, set, 41))?;
    manifest.write_json(
        "certificate.json",
        &CertificateFile {
            config_sha256: manifest.config_sha256.clone().unwrap_or_default(),
            certificate: report.reach.certificate.clone(),
        },
    )?;
    let summary = LorenzSummary {
        degree,
        objective: report.reach.certificate.objective_value,
        grid,
        steps,
        start_fraction: report.start_fraction,
        endpoint_fraction: report.endpoint_fraction,
        verification,
    };
    manifest.write_json("summary.json", &summary)?;
    println!("degree              {degree}");
    println!("objective           {:.10e}", summary.objective);
    println!("start containment   {:.6}", summary.start_fraction);
    println!("end containment     {:.6}", summary.endpoint_fraction);
    println!("verified            {}", summary.verification.passed);
    manifest.finish()
}
