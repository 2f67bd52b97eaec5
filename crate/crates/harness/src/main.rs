use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rootsgd_harness::{plan_from_file, report, run_experiment, workers_from_env, HarnessError};

/// Seeded Monte Carlo experiments for ROOT-SGD and its baselines.
///
/// Worker count comes from ROOTSGD_WORKERS (default: available parallelism).
/// Exit status is 0 on success, 1 when the config is invalid and 2 on a
/// runtime failure.
#[derive(Parser)]
#[command(name = "rootsgd-harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Check a config file and print the resolved plan or every violation.
    Validate { config: PathBuf },
    /// Summarize a results directory written by `run`.
    Report { results: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Run { config } => {
            let plan = plan_from_file(&config)?;
            let workers = workers_from_env();
            let outcome = run_experiment(&plan, workers)?;
            if !plan.in_theory {
                eprintln!("note: run is outside the step-size conditions of the theory");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            println!("samples consumed: {}", outcome.samples_consumed);
            Ok(())
        }
        Command::Validate { config } => {
            let plan = plan_from_file(&config)?;
            println!("ok: {} on {}", plan.method_name, plan.problem_name);
            println!("  eta = {}", plan.eta);
            if let Some(b) = plan.burn_in {
                println!("  burn_in = {b}");
            }
            println!("  horizon = {}", plan.horizon);
            println!("  replicates = {}", plan.replicates);
            println!("  in_theory = {}", plan.in_theory);
            Ok(())
        }
        Command::Report { results } => {
            print!("{}", report(&results)?);
            Ok(())
        }
    }
}
