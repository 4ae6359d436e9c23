use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum OcoError {
    /// Shape mismatch, out-of-range index, non-finite value or any other malformed input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A non-finite value appeared during an iterative computation.
    #[error("numeric failure at iteration {iteration}: {detail}")]
    Numeric { iteration: usize, detail: String },

    /// Dempster's rule is undefined when the two sources fully contradict each other.
    #[error("total conflict: mass functions share no compatible focal elements")]
    TotalConflict,

    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl OcoError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        OcoError::InvalidInput(msg.into())
    }

    pub(crate) fn parse(position: impl Into<String>, message: impl Into<String>) -> Self {
        OcoError::Parse {
            position: position.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, OcoError>;
