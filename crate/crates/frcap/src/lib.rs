//! Command-line harness over `frcap-core`.
//!
//! The library half of the `frcap` binary: configuration loading with
//! dotted-path overrides, CSV/IDX dataset ingestion, seeded synthetic
//! generators with label corruption, and the experiment runners behind
//! each subcommand. Everything is driven by a single JSON config document
//! (schema v1, published alongside the crate in `schema/`); reports land
//! in the configured output directory as UTF-8 CSV and JSON.
//!
//! Failures split into two kinds, mirrored in the process exit code:
//! [`CliError::Validation`] (bad config, bad input files, bad parameters —
//! exit 1) and [`CliError::Run`] (a run that started and then failed —
//! exit 2).

pub mod config;
pub mod io;
pub mod runners;
pub mod synthetic;

/// Harness-level error, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Configuration or input validation failed before any run started.
    #[error("{0}")]
    Validation(String),
    /// A run started and failed partway.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    /// Process exit code: 1 for validation errors, 2 for run failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Run(_) => 2,
        }
    }
}

impl From<frcap_core::Error> for CliError {
    fn from(e: frcap_core::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
