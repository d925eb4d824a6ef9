//! Crate-wide error type.
//!
//! Runtime conditions that depend on data or configuration (short series,
//! non-finite values, malformed files, invalid configs) surface as [`Error`].
//! Programming errors — shape mismatches on the tensor tape, out-of-range
//! slices — panic instead, with messages naming the offending shapes, in line
//! with the conventions of `ndarray` and friends.

use std::fmt;
use std::path::PathBuf;

/// Errors produced by simulation, training, evaluation, and file I/O.
#[derive(Debug)]
pub enum Error {
    /// A configuration value is out of its documented range or inconsistent
    /// with another value.
    InvalidConfig(String),
    /// An input series is too short for the requested operation.
    SeriesTooShort {
        /// What the caller was trying to do.
        what: &'static str,
        /// Minimum length the operation needs.
        needed: usize,
        /// Length actually provided.
        got: usize,
    },
    /// A numeric computation produced NaN or infinity.
    NonFinite(String),
    /// A file could not be parsed; `line` is 1-based.
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    /// Underlying I/O failure, annotated with the path involved.
    Io { path: PathBuf, source: std::io::Error },
    /// A failure inside a named stage of a multi-step run (training,
    /// evaluation, file output, ...), so aborts say where they happened.
    Stage { stage: &'static str, source: Box<Error> },
}

impl Error {
    /// True when the error stems from user-supplied configuration rather
    /// than a runtime failure; CLI callers map these to a distinct exit code.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidConfig(_) | Error::Parse { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::SeriesTooShort { what, needed, got } => {
                write!(f, "{what}: series of length {got} is too short (need at least {needed})")
            }
            Error::NonFinite(msg) => write!(f, "non-finite value: {msg}"),
            Error::Parse { path, line, msg } => {
                write!(f, "{}:{line}: {msg}", path.display())
            }
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Stage { stage, source } => write!(f, "{stage}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Stage { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}
