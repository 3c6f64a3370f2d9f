use std::path::PathBuf;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped so that callers (the CLI in particular) can map
/// them onto a small set of exit classes with [`Error::class`].
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient clips: need {needed}, found {found}")]
    InsufficientClips { needed: usize, found: usize },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("codec error: {0}")]
    Codec(String),

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: String },

    #[error("missing data: {0}")]
    Missing(String),

    #[error("external command failed: {0}")]
    External(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Runtime,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParam(_) => ErrorClass::Usage,
            Error::EmptyInput(_)
            | Error::InsufficientClips { .. }
            | Error::Format { .. }
            | Error::Codec(_)
            | Error::CheckpointVersion { .. }
            | Error::CorruptCheckpoint(_)
            | Error::Missing(_)
            | Error::Io { .. }
            | Error::Wav { .. } => ErrorClass::Data,
            Error::Shape(_) | Error::NonFinite { .. } | Error::External(_) => ErrorClass::Runtime,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
