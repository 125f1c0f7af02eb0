//! Library side of the command-line front end: column-name model
//! configuration, CSV ingestion, and machine-readable reports.

pub mod config;
pub mod ingest;
pub mod report;

use std::fmt;

/// CLI-level errors, mapped onto the exit-code contract:
/// 1 for input problems, 2 for fits that do not converge.
#[derive(Debug)]
pub enum CliError {
    /// Header/column problems.
    Schema(String),
    /// A cell that does not parse; row is 1-based over data rows.
    Parse { row: usize, column: String, message: String },
    /// A parsed value that violates the data contract.
    Value { row: usize, message: String },
    Io(std::io::Error),
    Core(genheck::Error),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Parse { row, column, message } => {
                write!(f, "parse error at row {row}, column {column}: {message}")
            }
            CliError::Value { row, message } => write!(f, "value error at row {row}: {message}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<genheck::Error> for CliError {
    fn from(e: genheck::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// 0 is success; 1 input error; 2 non-convergence.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(genheck::Error::NonConvergence { .. })
            | CliError::Core(genheck::Error::SingularInformation)
            | CliError::Core(genheck::Error::SingularCovariance)
            | CliError::Core(genheck::Error::NotConverged) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
