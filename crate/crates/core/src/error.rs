use thiserror::Error;

/// Crate-wide error type.
///
/// The variants split along the boundary that matters to callers: misuse of
/// an API contract (`Contract`, `Dimension`, `Validation`) versus failures
/// that can only be discovered at run time (`Numeric`, `Io`, parse errors).
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes disagree; names the offending tensor.
    #[error("dimension mismatch in {name}: expected {expected}, got {got}")]
    Dimension {
        name: String,
        expected: String,
        got: String,
    },

    /// A documented precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Overflow, NaN, or other numeric breakdown during evaluation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration or input data.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dimension(name: impl Into<String>, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Dimension {
            name: name.into(),
            expected: expected.into(),
            got: got.into(),
        }
    }

    /// True for errors caused by bad inputs or configuration (as opposed to
    /// failures that occurred while processing valid inputs).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. } | Error::Contract(_) | Error::Validation(_) | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
