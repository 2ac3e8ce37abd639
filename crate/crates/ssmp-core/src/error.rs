//! Error types shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller handed an operation something it cannot work with.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Input is technically well-formed but geometrically degenerate
    /// (for example a cloud whose points are all identical).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A serialized file does not follow its documented format.
    /// `offset` is the byte position at which decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Configuration hashes of artifacts that must match do not.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    /// Internal consistency violation (parameter shape drift and the like).
    /// These indicate a bug, not bad user input.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Training produced a non-finite loss. Carries a diagnostic snapshot.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
