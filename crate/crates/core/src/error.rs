//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error("size mismatch: {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: String,
        expected: u64,
        found: u64,
    },

    #[error("duplicate trial key: {0}")]
    DuplicateTrialKey(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("filter design failed: {0}")]
    FilterDesign(String),

    #[error("signal too short: {0}")]
    SignalTooShort(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "training diverged at epoch {epoch}: non-finite {component} (max |grad| = {max_grad:.3e})"
    )]
    TrainingDiverged {
        epoch: usize,
        component: String,
        max_grad: f64,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty result: {0}")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Malformed { path: String, detail: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
