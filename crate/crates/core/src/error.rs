use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{what} index {index} out of range (must be < {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter {0} has no gradient; run backward first")]
    MissingGradient(String),

    #[error("{0}: non-finite value encountered")]
    NonFinite(&'static str),

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("checkpoint: bad magic")]
    BadMagic,

    #[error("checkpoint: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint: unexpected end of file")]
    UnexpectedEof,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{format}: {message}")]
    Image {
        format: &'static str,
        message: String,
    },

    #[error("annotations line {line}: {message}")]
    Annotation { line: usize, message: String },

    #[error("sample `{0}` has no annotation")]
    MissingAnnotation(String),

    #[error("object does not fit: {0}")]
    ObjectDoesNotFit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
