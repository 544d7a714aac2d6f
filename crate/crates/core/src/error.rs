use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain of an operation (negative rate, empty
    /// mixture, invalid prior, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {left_name} has {left} windows but {right_name} has {right}")]
    DimensionMismatch {
        left_name: &'static str,
        left: usize,
        right_name: &'static str,
        right: usize,
    },

    /// A statistical test that is not defined for the given input (for
    /// example a goodness-of-fit test on an empty scan).
    #[error("undefined test: {0}")]
    UndefinedTest(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

/// A located parse failure. Lines and columns are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

impl ParseError {
    pub fn new(line: usize, column: usize, reason: impl Into<String>) -> Self {
        ParseError {
            line,
            column,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "parse error at line {}, column {}: {}",
            self.line, self.column, self.reason
        )
    }
}
