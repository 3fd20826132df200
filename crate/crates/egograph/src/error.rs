//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("assignment error: {0}")]
    Assignment(String),
    #[error("loss error: {0}")]
    Loss(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("probe error: {0}")]
    Probe(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
