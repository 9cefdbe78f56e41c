use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use ctilqr_cli::{check_derivs, run, seed_from_env, RunConfig};

#[derive(Parser)]
#[command(name = "ctilqr", version, about = "Continuous-time iterative LQR trajectory optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured problem and write iterations.csv, trajectory.csv and summary.json.
    Run {
        config: Option<PathBuf>,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Built-in model, overriding the config's `model` key.
        #[arg(long)]
        model: Option<String>,
    },
    /// Compare analytic derivatives with finite differences.
    CheckDerivs {
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
    },
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { config, out, model } => {
            let mut cfg = RunConfig::load(config.as_deref(), model.as_deref())?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let report = run(&cfg)?;
            let sol = &report.solution;
            println!(
                "{}: J = {:.6} after {} iterations ({}); results in {}",
                cfg.model.name(),
                sol.cost(),
                sol.iterations(),
                sol.termination,
                cfg.output_dir.display()
            );
            Ok(report.exit_code)
        }
        Command::CheckDerivs { config, model } => {
            let cfg = RunConfig::load(config.as_deref(), model.as_deref())?;
            let seed = seed_from_env()?;
            let report = check_derivs(&cfg.problem()?, seed)?;
            println!("model {} (seed {seed})", cfg.model.name());
            print!("{report}");
            Ok(if report.all_passed() { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
