use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SrnError>;

#[derive(Debug, Error)]
pub enum SrnError {
    /// Invalid architecture, loss, or training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Operand shapes do not agree for an operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Bad caller-supplied data (empty masks, indivisible image sizes, ...).
    #[error("input error: {0}")]
    Input(String),

    /// API misuse, e.g. `backward` on a non-scalar.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    /// Malformed file contents; `offset` is the byte position of the problem.
    #[error("format error in {path} at byte {offset}: {msg}", path = path.display())]
    Format {
        path: PathBuf,
        offset: usize,
        msg: String,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SrnError {
    pub(crate) fn format(path: impl Into<PathBuf>, offset: usize, msg: impl Into<String>) -> Self {
        SrnError::Format {
            path: path.into(),
            offset,
            msg: msg.into(),
        }
    }
}
