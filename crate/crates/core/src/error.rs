//! Error type shared across the crate.

use std::path::PathBuf;

/// Errors produced by data loading, validation, training and serving.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// I/O failure with the offending path attached.
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text input could not be parsed; `line` is 1-based.
    #[error("parse error in {path} line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    /// Input data violated a documented contract.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// One or more configuration constraints were violated.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// A binary artifact (checkpoint, index, cache) is malformed or from an
    /// unsupported format version.
    #[error("bad artifact {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Training produced a non-finite gradient.
    #[error("non-finite gradient in tensor {tensor} (epoch {epoch}, batch {batch})")]
    NonFiniteGradient { tensor: String, epoch: usize, batch: usize },

    /// Training loss became non-finite; the last good checkpoint was kept.
    #[error("training diverged at epoch {epoch}: mean loss is not finite")]
    Diverged { epoch: usize },

    /// Something referenced by name or id does not exist.
    #[error("{0}")]
    NotFound(String),
}

impl Error {
    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
