use thiserror::Error;

/// Errors produced by the simulators, estimators and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty system: {0}")]
    EmptySystem(&'static str),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("config field `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("failed to parse config: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Field {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::Field { .. } | Error::Parse(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
