use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("unsupported size: {0}")]
    Unsupported(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Unsupported(_) | Error::Format(_) => 1,
            Error::Divergence { .. } | Error::Infeasible(_) => 2,
            Error::Io(_) | Error::Csv(_) => 3,
        }
    }
}
