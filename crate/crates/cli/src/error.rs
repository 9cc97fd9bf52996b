//! Error type with stable process exit codes.

use qsmooth::compare::CompareError;
use qsmooth::model::ConfigError;
use qsmooth::oracle::OracleError;
use qsmooth::smoother::SmootherError;
use qsmooth::trajectory::TrajectoryError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_QND: i32 = 3;
pub const EXIT_CAP: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Qnd(String),
    #[error("{0}")]
    Cap(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Qnd(_) => EXIT_QND,
            CliError::Cap(_) => EXIT_CAP,
            CliError::Other(_) => EXIT_OTHER,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SmootherError> for CliError {
    fn from(e: SmootherError) -> Self {
        match e {
            SmootherError::QndRequired(_) => CliError::Qnd(e.to_string()),
            SmootherError::BeforeTau { .. } | SmootherError::GridMismatch(_) => CliError::Validation(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::CapExceeded { .. } => CliError::Cap(e.to_string()),
            OracleError::EstimandBeyondRecord { .. } | OracleError::Invalid(_) => CliError::Validation(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::GridMismatch { .. } => CliError::Validation(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<CompareError> for CliError {
    fn from(e: CompareError) -> Self {
        match e {
            CompareError::Oracle(e) => e.into(),
            CompareError::Trajectory(e) => e.into(),
            CompareError::Smoother(e) => e.into(),
            CompareError::Empty => CliError::Validation(e.to_string()),
        }
    }
}
