use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("truncation at k_max={k_max} leaves tail mass {tail_mass:e} > tolerance {tail_tol:e}")]
    Truncation {
        k_max: usize,
        tail_mass: f64,
        tail_tol: f64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("NRF is undefined when the mean total photocount is zero")]
    UndefinedAtVacuum,

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("fit did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },

    #[error("{0}: file contains no data rows")]
    EmptyInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Process exit code for the command-line front end: 2 for input and
    /// validation problems, 3 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. }
            | Error::DimensionMismatch(_)
            | Error::Parse { .. }
            | Error::EmptyInput(_)
            | Error::Degenerate(_)
            | Error::UndefinedAtVacuum => 2,
            Error::Truncation { .. } | Error::NonConvergence { .. } => 3,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) => 1,
        }
    }
}
