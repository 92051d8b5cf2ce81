use std::io;
use std::path::Path;

use crc_core::CrcError;
use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: line {line}: expected {expected} cells, found {found}")]
    RaggedRows { path: String, line: u64, expected: usize, found: usize },
    #[error("{path}: more than two label values; kept {known:?}, unexpected {extras:?}")]
    UnknownLabel { path: String, known: Vec<String>, extras: Vec<String> },
    #[error("{path}: duplicate {kind} id '{id}'")]
    DuplicateId { path: String, kind: &'static str, id: String },
    #[error("{path}: sample '{row}', column '{column}': '{value}' is not a finite number")]
    NonNumericCell { path: String, row: String, column: String, value: String },
    #[error("split infeasible: {0}")]
    SplitInfeasible(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Core(#[from] CrcError),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// Process exit code: 2 usage, 3 data or shape, 4 numerical, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e.root() {
                CrcError::ConfigError(_) => EXIT_USAGE,
                CrcError::Io(_) => EXIT_IO,
                _ if e.is_numerical() => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            },
            _ => EXIT_DATA,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
