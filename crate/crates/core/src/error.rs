//! Crate-wide error type.

use std::fmt;

/// Errors raised by the library, grouped by what went wrong rather than
/// where. The CLI maps these groups onto exit codes.
#[derive(Debug)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    Shape(String),
    /// Inconsistent model or run configuration.
    Config(String),
    /// Input data violates a precondition (dates, bands, splits).
    Data(String),
    /// A serialized artifact is corrupt or has the wrong version.
    Format(String),
    /// Training aborted (non-finite loss or gradient).
    Train(String),
    /// A numeric operation produced a non-finite value.
    Numeric(String),
    /// Underlying I/O failure.
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::Train(msg) => write!(f, "training error: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
