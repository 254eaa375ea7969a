use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid model or loss configuration.
    Config(String),
    /// Input tensor or image does not match the model.
    Input(String),
    /// Invalid argument to an operation.
    Argument(String),
    /// Malformed encoded data (RLE strings, label records).
    Format(String),
    /// A metric is not defined for the given labels.
    UndefinedMetric(&'static str),
    /// A loss or gradient became non-finite during training.
    Divergence { epoch: usize, step: usize, what: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Argument(msg) => write!(f, "argument error: {msg}"),
            Error::Format(msg) => write!(f, "format error: {msg}"),
            Error::UndefinedMetric(msg) => write!(f, "undefined metric: {msg}"),
            Error::Divergence { epoch, step, what } => {
                write!(f, "non-finite {what} at epoch {epoch}, step {step}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
