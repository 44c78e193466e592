use thiserror::Error;

/// Errors raised by dataset validation, configuration checks and the solver.
#[derive(Debug, Error)]
pub enum WccError {
    /// A dataset invariant is violated. `location` names the offending block
    /// when one can be identified.
    #[error("invalid dataset at location `{location}`: {message}")]
    InvalidData { location: String, message: String },

    /// Malformed input file (missing column, unparsable value).
    #[error("input error: {0}")]
    Input(String),

    /// A penalty or solver parameter is out of range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A normal-equation system stayed singular after the jitter retry.
    #[error("singular linear system in {context}; use vartheta > 0 or check for degenerate design columns")]
    Singular { context: String },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl WccError {
    pub(crate) fn data(location: impl Into<String>, message: impl Into<String>) -> Self {
        WccError::InvalidData {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by the input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            WccError::InvalidData { .. } | WccError::Input(_) | WccError::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, WccError>;
