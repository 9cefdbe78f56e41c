//! Batch front-end: solve a configured problem and write CSV/JSON results.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ctilqr::ocp::{check_derivatives, random_samples, DerivativeReport, ProblemDef};
use ctilqr::solver::{solve, IterationRecord, Solution, Termination};
use nalgebra::DVector;
use serde_json::{json, Value};

pub use config::{ModelKind, RunConfig};

pub const ITERATIONS_HEADER: &str = "iter,J,alpha,n_bwd,n_fwd,dv1,wall_ms";
pub const CARTPOLE_TRAJECTORY_HEADER: &str = "t,s,theta,sdot,thetadot,u,c";

pub const DERIV_SAMPLES: usize = 50;
pub const DERIV_TOL: f64 = 1e-5;
pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "CTILQR_SEED";

pub fn exit_code(termination: &Termination) -> u8 {
    match termination {
        Termination::Converged => 0,
        Termination::LineSearchExhausted | Termination::MaxIterations => 2,
        Termination::Failed { .. } => 1,
    }
}

/// 17 significant digits, locale independent.
fn real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn iterations_csv(records: &[IterationRecord], timing: bool) -> String {
    let mut out = String::from(ITERATIONS_HEADER);
    out.push('\n');
    for r in records {
        let wall = if timing { r.wall_ms } else { 0.0 };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter,
            real(r.cost),
            real(r.alpha),
            r.n_bwd,
            r.n_fwd,
            real(r.dv1),
            real(wall)
        );
    }
    out
}

fn trajectory_header(model: ModelKind, n_x: usize, n_u: usize) -> String {
    if model != ModelKind::LqDoubleIntegrator {
        return CARTPOLE_TRAJECTORY_HEADER.to_string();
    }
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n_x).map(|i| format!("x{i}")));
    cols.extend((0..n_u).map(|i| if n_u == 1 { "u".to_string() } else { format!("u{i}") }));
    cols.push("c".into());
    cols.join(",")
}

/// Uniformly sampled dense trajectory.
pub fn trajectory_csv(model: ModelKind, problem: &ProblemDef, solution: &Solution, samples: usize) -> Result<String> {
    let traj = &solution.trajectory;
    let (t0, tf) = problem.horizon();
    let mut out = trajectory_header(model, problem.n_x, problem.n_u);
    out.push('\n');
    for i in 0..samples {
        let t = if i + 1 == samples {
            tf
        } else {
            t0 + (tf - t0) * i as f64 / (samples - 1) as f64
        };
        let x = traj.state(t)?;
        let u = traj.control(t)?;
        let c = traj.accumulated_cost(t)?;
        let row: Vec<String> = std::iter::once(t)
            .chain(x.iter().copied())
            .chain(u.iter().copied())
            .chain(std::iter::once(c))
            .map(real)
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

fn dt_extremes(records: &[IterationRecord], pick: fn(&IterationRecord) -> Option<(f64, f64)>) -> Value {
    let ranges: Vec<_> = records.iter().filter_map(pick).collect();
    if ranges.is_empty() {
        return Value::Null;
    }
    let lo = ranges.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let hi = ranges.iter().map(|r| r.1).fold(0.0, f64::max);
    json!({ "min": lo, "max": hi })
}

pub fn summary_json(cfg: &RunConfig, solution: &Solution) -> Value {
    let detail = match &solution.termination {
        Termination::Failed { reason, .. } => Value::String(reason.to_string()),
        _ => Value::Null,
    };
    json!({
        "model": cfg.model.name(),
        "termination": solution.termination.name(),
        "termination_detail": detail,
        "J": solution.cost(),
        "iterations": solution.iterations(),
        "final_state": solution.trajectory.final_state().as_slice(),
        "backward_step_size": dt_extremes(&solution.records, |r| r.bwd_dt),
        "forward_step_size": dt_extremes(&solution.records, |r| r.fwd_dt),
        "parameters": Value::Object(cfg.echo()),
    })
}

/// Outcome of [`run`]: what was written and the process exit status.
#[derive(Debug)]
pub struct RunReport {
    pub solution: Solution,
    pub exit_code: u8,
}

pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let problem = cfg.problem()?;
    let n_u = problem.n_u;
    let solution = solve(&problem, |_| DVector::zeros(n_u), &cfg.solver)?;
    write_outputs(cfg, &problem, &solution)?;
    Ok(RunReport {
        exit_code: exit_code(&solution.termination),
        solution,
    })
}

pub fn write_outputs(cfg: &RunConfig, problem: &ProblemDef, solution: &Solution) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    write(dir, "iterations.csv", &iterations_csv(&solution.records, cfg.timing))?;
    write(dir, "trajectory.csv", &trajectory_csv(cfg.model, problem, solution, cfg.samples)?)?;
    let summary = serde_json::to_string_pretty(&summary_json(cfg, solution))? + "\n";
    write(dir, "summary.json", &summary)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))
}

pub fn seed_from_env() -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().with_context(|| format!("{SEED_ENV} must be an unsigned integer, got `{s}`")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

/// Derivative check at seeded random points: states in `[−3, 3]`, controls in `[−10, 10]`.
pub fn check_derivs(problem: &ProblemDef, seed: u64) -> Result<DerivativeReport> {
    let samples = random_samples(problem, DERIV_SAMPLES, seed, 3.0, 10.0);
    Ok(check_derivatives(problem, &samples, DERIV_TOL)?)
}
