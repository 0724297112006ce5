use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the debiasing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("non-finite value in row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("invalid labels for `{attribute}`: {reason}")]
    Labels { attribute: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("numerically singular gram matrix (min pivot {min_pivot:.3e}, max diagonal {max_diag:.3e}, rows {rows})")]
    Singular { min_pivot: f64, max_diag: f64, rows: usize },

    #[error("non-finite loss at step {step}: {context}")]
    NonFiniteLoss { step: usize, context: String },

    #[error("training diverged at epoch {epoch}: loss {loss:.4e} exceeded 10x initial {initial:.4e} for 3 consecutive epochs")]
    Diverged { epoch: usize, loss: f64, initial: f64 },

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
