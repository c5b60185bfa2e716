use thiserror::Error;

/// Which structural check failed while decoding a binary scene or image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatKind {
    Magic,
    Version,
    Length,
    Header,
}

#[derive(Debug, Error)]
pub enum LgsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("format error ({kind:?}): {detail}")]
    Format { kind: FormatKind, detail: String },
    #[error("optimization diverged: non-finite values in parameter group `{group}`")]
    Diverged { group: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl LgsError {
    pub fn invalid_argument(msg: impl Into<String>) -> Self {
        LgsError::InvalidArgument(msg.into())
    }

    pub fn invalid_state(msg: impl Into<String>) -> Self {
        LgsError::InvalidState(msg.into())
    }

    pub fn format(kind: FormatKind, detail: impl Into<String>) -> Self {
        LgsError::Format {
            kind,
            detail: detail.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(self, LgsError::InvalidArgument(_) | LgsError::Json(_))
    }
}

pub type Result<T> = std::result::Result<T, LgsError>;
