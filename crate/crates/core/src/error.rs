use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the training stack.
///
/// The variants line up with the CLI exit-code classes: configuration
/// problems, bad input data, shape mismatches, numerical aborts and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: total={total}, ce={ce}, kd={kd}"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        total: f64,
        ce: f64,
        kd: f64,
    },

    #[error("persistence error at {}: {message}", path.display())]
    Persistence { path: PathBuf, message: String },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn persistence(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Persistence {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
