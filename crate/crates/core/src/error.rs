use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: field `{field}`: {message}")]
    Manifest { path: PathBuf, field: String, message: String },

    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("foreground set is empty after erosion")]
    EmptyForeground,

    #[error("background set is empty after dilation")]
    EmptyBackground,

    #[error("unary training requires both foreground and background points")]
    SingleClass,

    #[error("unknown action `{0}`")]
    UnknownAction(String),

    #[error("goal unreachable from start")]
    Unreachable,

    #[error("no free cell found in annulus after {0} trials")]
    NoFreeCell(usize),

    #[error("episode abandoned: {0}")]
    Abandoned(String),

    #[error("no ground truth available: {0}")]
    NoGroundTruth(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn manifest(path: impl Into<PathBuf>, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Manifest { path: path.into(), field: field.into(), message: message.into() }
    }
}
