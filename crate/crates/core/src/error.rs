//! Crate-wide error type.

use std::fmt;
use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
#[derive(Debug)]
pub enum Error {
    /// A caller-supplied value violates an operation's contract
    /// (shape mismatch, out-of-range index, bad config, ...).
    InvalidArgument(String),
    /// A manifest or config file could not be parsed.
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// An I/O operation failed.
    Io { path: PathBuf, source: std::io::Error },
    /// An image file could not be decoded.
    Decode { path: PathBuf, message: String },
    /// A checkpoint file is invalid (bad magic, version, digest, truncation).
    Checkpoint(String),
    /// A metric is undefined for the given inputs (e.g. AUC with one class).
    UndefinedMetric(String),
    /// Training produced a non-finite loss.
    NonFiniteLoss { epoch: usize, step: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Parse {
                path,
                line,
                message,
            } => write!(f, "parse error in {} at line {line}: {message}", path.display()),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Decode { path, message } => {
                write!(f, "cannot decode image {}: {message}", path.display())
            }
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::NonFiniteLoss { epoch, step } => {
                write!(f, "non-finite loss at epoch {epoch}, step {step}")
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
