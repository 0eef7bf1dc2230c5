use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure classes for dataset files. Each maps to a distinct error code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    Version,
    Truncated,
    Integrity,
    Validation,
    Parse,
}

impl FormatErrorKind {
    pub fn code(self) -> u8 {
        match self {
            FormatErrorKind::Version => 10,
            FormatErrorKind::Truncated => 11,
            FormatErrorKind::Integrity => 12,
            FormatErrorKind::Validation => 13,
            FormatErrorKind::Parse => 14,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown task id {0}")]
    UnknownTask(u32),

    #[error("missing cached features: {0}")]
    MissingFeatures(String),

    #[error("{stage}: diverged ({detail})")]
    Divergence { stage: &'static str, detail: String },

    #[error("dataset format error [{kind:?}]: {detail}")]
    Format { kind: FormatErrorKind, detail: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(kind: FormatErrorKind, detail: impl Into<String>) -> Self {
        Error::Format {
            kind,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// The format failure class, if this is a dataset format error.
    pub fn format_kind(&self) -> Option<FormatErrorKind> {
        match self {
            Error::Format { kind, .. } => Some(*kind),
            _ => None,
        }
    }
}
