use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid dimensions, schedules, tilings or other configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Vector or matrix lengths that do not line up.
    #[error("shape error: expected {expected}, got {actual} ({context})")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    /// Non-finite or otherwise unusable numeric data.
    #[error("data error: {0}")]
    Data(String),
    /// An operation called with arguments that violate its contract.
    #[error("usage error: {0}")]
    Usage(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}
