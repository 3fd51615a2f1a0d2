use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("length error: expected {expected} samples, found {found}")]
    Length { expected: usize, found: usize },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("index {index} out of range (valid: 0..{len})")]
    Index { index: usize, len: usize },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unsupported architecture: {0}")]
    Spec(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
