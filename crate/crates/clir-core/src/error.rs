//! Error type shared across the toolkit.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by any stage of the pipeline.
///
/// Variants are grouped by how they map onto the CLI exit-code contract:
/// transport and protocol failures are remote-service problems (exit 3),
/// everything else is a data or format problem (exit 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text token (language code, combination, direction, flag value)
    /// could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// A binary or structured file violates its format contract.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// One record of a line-oriented file is invalid.
    #[error("record error at line {line}: {message}")]
    Record { line: usize, message: String },

    /// A documented precondition of an operation was violated by the caller.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Two tensor archives are not structurally compatible for merging.
    #[error("structural mismatch: {0}")]
    Structural(String),

    /// The remote embedding service could not be reached or kept failing.
    #[error("transport error: {0}")]
    Transport(String),

    /// The remote embedding service answered with inconsistent data.
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn record(line: usize, message: impl Into<String>) -> Self {
        Error::Record {
            line,
            message: message.into(),
        }
    }

    /// True for failures of the remote embedding service, as opposed to
    /// local data problems.
    pub fn is_remote(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Protocol(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
