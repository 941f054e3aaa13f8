use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum UnmixError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: field `{field}`: {reason}")]
    Format {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("payload size mismatch in {path}: header declares {expected} values, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("diverged at step {step}: loss {loss:e} (initial {initial:e})")]
    Diverged {
        step: usize,
        loss: f64,
        initial: f64,
    },
    #[error(transparent)]
    Autodiff(#[from] unmix_autodiff::AutodiffError),
}

pub type Result<T> = std::result::Result<T, UnmixError>;

impl UnmixError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
