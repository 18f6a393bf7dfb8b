use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("column `{0}` not found in the header")]
    MissingColumn(String),

    #[error("non-numeric value in data row {row}, column `{col}`: {value:?}")]
    NonNumericCell { row: usize, col: String, value: String },

    #[error("no complete rows left after dropping {dropped} incomplete ones")]
    EmptyAfterFiltering { dropped: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: directory holds results for config {found}, this run is {expected} (use --force to overwrite)")]
    ConfigMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] affinity_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
