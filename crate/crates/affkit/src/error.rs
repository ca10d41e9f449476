//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shape inconsistency.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed on-disk data (image, mask, manifest).
    #[error("{path}: {msg}")]
    FileFormat { path: String, msg: String },

    /// Checkpoint rejected; `offset` is the byte position of the failure.
    #[error("checkpoint {path}: {msg} (byte offset {offset})")]
    Checkpoint {
        path: String,
        offset: u64,
        msg: String,
    },

    /// Run-configuration parse or validation failure.
    #[error("config: {0}")]
    Config(String),

    /// Evaluation input mismatch (e.g. missing predictions).
    #[error("eval: {0}")]
    Eval(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
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
