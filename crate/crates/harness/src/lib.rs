//! Seeded Monte Carlo experiments for the `rootsgd` library.
//!
//! A run goes config text → [`ExperimentConfig`] → [`RunPlan`] (problem
//! built, step size, burn-in and horizon resolved, strict-mode checks done)
//! → replicates on a worker pool → CSV files. Replicate `r` always draws from
//! the stream `(master_seed, r)` and results are written in replicate order,
//! so output bytes do not depend on the worker count.

pub mod config;
pub mod plan;
pub mod report;
pub mod runner;

use std::path::Path;

pub use config::{ExperimentConfig, MethodKind, ProblemKind, Violation};
pub use plan::{resolve, validate_config, AnyProblem, ResolvedMethod, RunPlan};
pub use report::report;
pub use runner::{execute, run_experiment, run_experiment_in, workers_from_env, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config:\n{}", .0.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<Violation>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] rootsgd::Error),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// CLI exit status: 1 for validation failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Parses and resolves config text in one go.
pub fn plan_from_text(text: &str) -> Result<RunPlan, HarnessError> {
    let cfg = ExperimentConfig::parse(text).map_err(HarnessError::Config)?;
    resolve(&cfg).map_err(HarnessError::Config)
}

/// Reads, parses and resolves a config file.
pub fn plan_from_file(path: &Path) -> Result<RunPlan, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    plan_from_text(&text)
}
