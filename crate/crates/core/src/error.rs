use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate frame: Gram determinant is not positive")]
    DegenerateFrame,

    #[error("grassmann kernel `{0}` is not nonnegative; quantization requires binet or oriented_gaussian")]
    IndefiniteKernel(&'static str),

    #[error("target varifold is empty")]
    EmptyTarget,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite state at {0}; momenta are too large or sigma_v too small")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::DegenerateFrame)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
