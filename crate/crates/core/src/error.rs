use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("tokenizer hash mismatch: checkpoint expects {expected}, file has {actual}")]
    TokenizerHash { expected: String, actual: String },

    #[error("unsupported format version {found} in {what} (expected {expected})")]
    Version {
        what: &'static str,
        found: String,
        expected: String,
    },

    #[error("sequence of {len} tokens exceeds max_positions {max}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    TooLong {
        len: usize,
        max: usize,
        context: Option<String>,
    },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user data or arguments rather than a
    /// bug or environment failure.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Parse { .. }
            | Error::InvalidInput(_)
            | Error::TokenizerHash { .. }
            | Error::Version { .. }
            | Error::TooLong { .. }
            | Error::Json(_) => true,
            Error::Stage { source, .. } => source.is_data_error(),
            Error::Shape { .. } | Error::NonFinite(_) | Error::Diverged { .. } => false,
        }
    }
}
