use std::path::PathBuf;

use cigan_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CiganError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("shape: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("data: {0}")]
    Data(String),
    #[error("non-finite loss at step {step}{}", last_checkpoint.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    NonFinite {
        step: usize,
        last_checkpoint: Option<PathBuf>,
    },
}

impl CiganError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CiganError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CiganError>;
