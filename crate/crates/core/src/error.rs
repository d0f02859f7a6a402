use std::io;

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {column} has zero variance")]
    ConstantColumn { column: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("sample covariance is singular")]
    SingularCovariance,

    #[error("energy scale is not positive")]
    DegenerateScale,

    #[error("{n} variables exceeds the exact enumeration limit of {max}")]
    TooManyVariables { n: usize, max: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("series too short: need at least {needed} time points, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("mixture component {component} collapsed")]
    DegenerateComponent { component: usize },

    #[error("Euler-Maruyama step is unstable: dt * rate = {bound:.3} >= pi")]
    UnstableStep { bound: f64 },

    #[error("SNR needs at least two states")]
    SingleState,

    #[error("basin {basin} has no assigned points")]
    EmptyBasin { basin: usize },

    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorClass::Config,
            Error::ConstantColumn { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidInput(_)
            | Error::TooManyVariables { .. }
            | Error::TooShort { .. }
            | Error::TooFewSamples { .. }
            | Error::SingleState
            | Error::EmptyBasin { .. }
            | Error::Format { .. }
            | Error::Io(_)
            | Error::Csv(_) => ErrorClass::Data,
            Error::NotPositiveDefinite
            | Error::SingularCovariance
            | Error::DegenerateScale
            | Error::NonFinite(_)
            | Error::DegenerateComponent { .. }
            | Error::UnstableStep { .. } => ErrorClass::Numerical,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}
