use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, channel counts or resolutions that do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error in {context}: {message}")]
    Numerical { context: String, message: String },

    #[error("integrity check failed for {path}: {check}")]
    Integrity { path: PathBuf, check: String },

    #[error("role mismatch: expected {expected}, file contains {found}")]
    RoleMismatch { expected: String, found: String },

    #[error("detector backend `{0}` is unavailable")]
    Unavailable(String),

    #[error("average precision is undefined: there are no ground-truth boxes")]
    UndefinedAp,

    #[error("missing upstream artifact: {0}")]
    Dependency(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("ingestion failed for {path}: {message}")]
    Ingestion { path: PathBuf, message: String },

    #[error("checkpoint refused: {0}")]
    Checkpoint(String),

    #[error("frame `{frame_id}`: {source}")]
    Frame {
        frame_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn numerical(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Wraps the error with the frame it occurred on.
    pub fn in_frame(self, frame_id: impl Into<String>) -> Self {
        Error::Frame {
            frame_id: frame_id.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-readable category used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Structural(_) => "structural",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Numerical { .. } => "numerical",
            Error::Integrity { .. } => "integrity",
            Error::RoleMismatch { .. } => "role_mismatch",
            Error::Unavailable(_) => "unavailable",
            Error::UndefinedAp => "undefined_ap",
            Error::Dependency(_) => "dependency",
            Error::Generation(_) => "generation",
            Error::Ingestion { .. } => "ingestion",
            Error::Checkpoint(_) => "checkpoint",
            Error::Frame { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Codec { .. } => "codec",
            Error::Serde(_) => "serde",
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
