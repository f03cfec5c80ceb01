use std::fmt;

/// Errors produced by the library, grouped by what went wrong rather than
/// where it happened.
#[derive(Debug)]
pub enum Error {
    /// Tensor shapes are inconsistent; the message names the offending axis.
    Dim(String),
    /// A configuration value is invalid (bad extent, bad hyperparameter, ...).
    Config(String),
    /// Input data is invalid (out-of-bounds annotation, bad file contents, ...).
    Data(String),
    /// A file could not be parsed; the message carries an offset where known.
    Parse(String),
    /// An API contract was violated (backward twice, missing gradient, ...).
    Contract(String),
    /// A numeric check failed (non-finite value, tolerance exceeded, ...).
    Numeric(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim(m) => write!(f, "dimension error: {m}"),
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Data(m) => write!(f, "data error: {m}"),
            Error::Parse(m) => write!(f, "parse error: {m}"),
            Error::Contract(m) => write!(f, "contract error: {m}"),
            Error::Numeric(m) => write!(f, "numeric error: {m}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
