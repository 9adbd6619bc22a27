use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use fpk_core::scenario::{
    check_scenario, parse_scenario, parse_sweep, prepare, prepare_output_dir, run_scenario, run_sweep,
    write_artifacts,
};
use fpk_core::{compute_equilibrium, integrate};

/// Finite-volume laboratory for nonlinear Fokker-Planck equations on the periodic torus.
#[derive(Debug, Parser)]
#[command(name = "fpk", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Directory receiving the artifacts.
    #[arg(long, env = "FPK_OUT_DIR", default_value = "./out")]
    out: PathBuf,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write series.csv and report.json.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a parameter sweep and write sweep.csv plus one directory per value.
    Sweep {
        spec: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        /// Concurrent scenario runs (defaults to the number of logical cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Evaluate theorem conditions on the initial state without time stepping.
    Check { scenario: PathBuf },
    /// Print equilibrium statistics and the normalizing shift.
    Equilibrium { scenario: PathBuf },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { scenario, output } => {
            let s = parse_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            prepare_output_dir(&output.out, output.force)?;
            let outcome = run_scenario(&s).with_context(|| format!("running scenario {}", s.name))?;
            write_artifacts(&output.out, &s, &outcome)?;
            let run = outcome.report.run.as_ref().expect("run summary present after a run");
            println!(
                "{}: {} steps, {} records, final t = {}, artifacts in {}",
                s.name,
                run.accepted_steps,
                run.records,
                run.final_time,
                output.out.display()
            );
        }
        Command::Sweep { spec, output, jobs } => {
            let (sweep, base) = parse_sweep(&spec).with_context(|| format!("loading {}", spec.display()))?;
            prepare_output_dir(&output.out, output.force)?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let rows = run_sweep(&sweep, &base, &output.out, jobs.max(1))?;
            let failed = rows.iter().filter(|r| r.decay_rate.is_none()).count();
            println!(
                "{} rows ({} without a decay rate), sweep.csv in {}",
                rows.len(),
                failed,
                output.out.display()
            );
        }
        Command::Check { scenario } => {
            let s = parse_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let report = check_scenario(&s)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Equilibrium { scenario } => {
            let s = parse_scenario(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let (coeffs, _) = prepare(&s)?;
            let eq = compute_equilibrium(&coeffs, 1e-13)?;
            let summary = serde_json::json!({
                "scenario": s.name,
                "shift": eq.shift,
                "feq_min": eq.feq.min(),
                "feq_max": eq.feq.max(),
                "mass": integrate(&eq.feq),
                "phi_sup": coeffs.phi().sup_norm(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
