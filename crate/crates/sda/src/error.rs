//! Error type for the command-line front end, mapped onto process exit
//! codes: configuration and input validation (2), backend failures (3),
//! exhausted generation budgets (4), filesystem problems (5).

use sda_core::augmentor::AugmentError;
use sda_core::backend::BackendError;
use sda_core::baselines::BaselineError;
use sda_core::metrics::MetricsError;
use thiserror::Error;

use crate::records::RecordError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("budget exhausted: {0}")]
    Budget(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Budget(_) => EXIT_BUDGET,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<RecordError> for CliError {
    fn from(err: RecordError) -> Self {
        match err {
            // Filesystem-level trouble is an I/O failure; everything else
            // is bad input data named by the configuration.
            RecordError::Read { .. } | RecordError::Write { .. } => CliError::Io(err.to_string()),
            _ => CliError::Config(err.to_string()),
        }
    }
}

impl From<AugmentError> for CliError {
    fn from(err: AugmentError) -> Self {
        match &err {
            AugmentError::Backend { .. } => CliError::Backend(err.to_string()),
            AugmentError::SummaryBudgetExhausted { .. } => CliError::Budget(err.to_string()),
            _ => CliError::Config(err.to_string()),
        }
    }
}

impl From<BaselineError> for CliError {
    fn from(err: BaselineError) -> Self {
        match &err {
            BaselineError::Backend(_) => CliError::Backend(err.to_string()),
            _ => CliError::Config(err.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(err: MetricsError) -> Self {
        match &err {
            MetricsError::Backend(_) => CliError::Backend(err.to_string()),
            _ => CliError::Config(err.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(err: BackendError) -> Self {
        CliError::Backend(err.to_string())
    }
}
