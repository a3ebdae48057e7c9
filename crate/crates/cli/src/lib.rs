//! Scenario runner behind the `qpm` binary.
//!
//! A [`config::Scenario`] drives every subcommand; [`commands`] turns it into
//! CSV curves and JSON records under the output directory, and [`report`]
//! evaluates the reproduction criteria.

pub mod commands;
pub mod config;
pub mod output;
pub mod report;

use std::path::PathBuf;

pub use commands::{run, Command, RunOptions};
pub use config::Scenario;
pub use output::Format;

pub const TOOL_NAME: &str = "qpm";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] qpm_core::Error),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("no converged solution: {0}")]
    NotConverged(String),
}

impl CliError {
    /// Process exit status: 2 for configuration and input problems, 1 for
    /// computations that failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Input(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
