//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {line}: {reason}")]
    BadRow { line: u64, reason: String },

    #[error("no rows")]
    EmptyDataset,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
