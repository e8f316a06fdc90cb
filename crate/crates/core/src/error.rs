//! Library error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("signal error: {0}")]
    Signal(String),

    #[error("beat detection failed: {0}")]
    BeatDetection(String),

    #[error("insufficient windows: found {found}, need {need}")]
    InsufficientWindows { found: usize, need: usize },

    #[error("training error: {0}")]
    Training(String),

    #[error("confidence learning error: {0}")]
    Confidence(String),

    #[error("fold construction error: {0}")]
    FoldPlan(String),

    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data format error in {path}: {message}")]
    DataFormat { path: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::DataFormat {
            path: path.into(),
            message: message.into(),
        }
    }
}
