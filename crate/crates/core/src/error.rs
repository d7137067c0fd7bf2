//! Error type shared across the crate.

use std::path::Path;

/// Crate-wide error enum. Variants group into usage errors (bad arguments or
/// configuration), input errors (files and data that do not parse or validate),
/// and numeric failures (degenerate geometry, divergence).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("code error: {0}")]
    Code(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("normalization error: {0}")]
    Normalization(String),
    #[error("k-means produced an empty cluster")]
    EmptyCluster,
    #[error("construction failed: {0}")]
    Construction(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Format error annotated with a file path and 1-based line number.
    pub fn format_at(path: &Path, line: usize, msg: impl Into<String>) -> Error {
        Error::Format(format!("{}:{}: {}", path.display(), line, msg.into()))
    }

    pub fn format_in(path: &Path, msg: impl Into<String>) -> Error {
        Error::Format(format!("{}: {}", path.display(), msg.into()))
    }
}
