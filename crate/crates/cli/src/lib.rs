//! Command implementations behind the `riskswitch` binary.
//!
//! Each `cmd_*` function takes a loaded [`Problem`], writes its CSV output
//! and a human-readable summary, and returns a report for programmatic use.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::{
    cmd_oracle, cmd_residual, cmd_solve, cmd_sweep, cmd_validate, load, solve, Axis, OracleReport, OracleRow,
    Overrides, ResidualReport, ResidualRow, SolveReport, Solved, SweepReport,
};
pub use config::{Problem, RunConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Standard error above which an oracle estimate is flagged as imprecise.
pub const LOW_PRECISION_SE: f64 = 1e-2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Model(#[from] riskswitch::Error),

    /// A self-check on the results failed (monotonicity, oracle z-score,
    /// residual refinement).
    #[error("check failed: {0}")]
    Violation(String),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Usage(_) => 2,
            CliError::Violation(_) => 3,
            _ => 1,
        }
    }
}
