use std::io;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("user {0} has no sensitive attribute")]
    MissingAttribute(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sampling error: need {requested} items but only {available} are eligible")]
    Sampling { requested: usize, available: usize },

    #[error("{table} index {index} out of bounds (rows = {rows})")]
    Index {
        table: &'static str,
        index: usize,
        rows: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient in {table} row {row}")]
    NonFiniteGradient { table: &'static str, row: usize },

    #[error("both sensitive groups must be present in the batch")]
    GroupAbsent,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short category name, used by the CLI to report failures.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::MissingAttribute(_) => "data",
            Error::Config(_) | Error::InvalidArgument(_) => "config",
            Error::Io(_) | Error::Json(_) | Error::Checkpoint(_) => "io",
            _ => "runtime",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
