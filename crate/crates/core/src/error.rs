//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any stage of the diagnosis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of range or non-finite. Names the field.
    #[error("configuration error: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    /// An operation parameter is invalid (non-finite, out of range).
    #[error("parameter error: {name}: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A size precondition failed (window too short, target too large, ...).
    #[error("sizing error: {0}")]
    Sizing(String),

    /// Dimension mismatch between an input and a model or dictionary.
    #[error("shape error: {0}")]
    Shape(String),

    /// Empty or otherwise insufficient input data.
    #[error("input error: {0}")]
    Input(String),

    /// Window whose statistics are undefined (all-zero / zero variance).
    #[error("degenerate window: {0}")]
    DegenerateWindow(String),

    /// Covariance factorization failed; a positive ridge epsilon is required.
    #[error("singular covariance: {0}; refit with a positive ridge_epsilon")]
    Singular(String),

    /// Training produced a non-finite loss.
    #[error("training error at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    /// A pipeline stage ran before its inputs were produced.
    #[error("dependency error: stage '{stage}' output missing: {detail}")]
    Dependency { stage: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A persisted artifact failed validation on read.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    /// Stable machine-readable kind tag, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Parameter { .. } => "parameter",
            Error::Sizing(_) => "sizing",
            Error::Shape(_) => "shape",
            Error::Input(_) => "input",
            Error::DegenerateWindow(_) => "degenerate_window",
            Error::Singular(_) => "singular",
            Error::Training { .. } => "training",
            Error::Dependency { .. } => "dependency",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
