use std::path::PathBuf;

use permapprox_core::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILED: i32 = 1;
    pub const INFEASIBLE: i32 = 2;
    pub const INPUT: i32 = 3;
    pub const CAP_EXCEEDED: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{}: parse error at byte {offset} (line {line}, column {column}): {message}", path.display())]
    Parse {
        path: PathBuf,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::NoFeasibleArrangement { .. }) => exit::INFEASIBLE,
            CliError::Core(CoreError::CapExceeded { .. }) => exit::CAP_EXCEEDED,
            CliError::Failed(_) => exit::FAILED,
            _ => exit::INPUT,
        }
    }
}
