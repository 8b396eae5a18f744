//! Config-driven front end for `bsdelta-core`.
//!
//! A run reads one JSON [`ExperimentConfig`], dispatches to the solver or
//! an analysis, and produces byte-reproducible JSON or CSV artifacts.

pub mod commands;
pub mod config;
pub mod emit;

use std::fmt;

use bsdelta_core::analysis::AnalysisError;
use bsdelta_core::duality::DualityError;
use bsdelta_core::{DriverError, SolveError};
use clap::ValueEnum;

pub use commands::{run, Artifact, Options, Outcome};
pub use config::{Command, ExperimentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

/// `Config` maps to exit status 2, `Run` to 1.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }

    /// Malformed input is a config error; a declaration the driver fails to
    /// honour is a contract error.
    pub(crate) fn driver(key: &str, e: DriverError) -> Self {
        let msg = format!("{key}: {e}");
        match e {
            DriverError::Parse(_) | DriverError::UnknownBuiltin(_) | DriverError::InvalidParameter(_) => {
                CliError::Config(msg)
            }
            _ => CliError::Run(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Run(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

macro_rules! run_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Run(e.to_string())
            }
        }
    )*};
}

run_error!(SolveError, AnalysisError, DualityError);
