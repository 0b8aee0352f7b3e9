use std::path::PathBuf;

use thiserror::Error;

use crate::population::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid population spec:\n{0}")]
    Validation(ValidationReport),

    #[error("config error: {0}")]
    Config(String),

    #[error("sizing error: {0}")]
    Sizing(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown executor `{0}`")]
    UnknownExecutor(String),

    #[error("executor `{executor}` does not know value `{value}` for variable `{variable}`")]
    UnknownMethodValue {
        executor: String,
        variable: String,
        value: String,
    },

    #[error("executor `{executor}` has no variable `{variable}`")]
    UnknownVariable { executor: String, variable: String },

    #[error("executor `{executor}` requires variable `{variable}`")]
    MissingVariable { executor: String, variable: String },

    #[error("enumeration needs {required} systems, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u64 },

    #[error("execution failed for system {system_id} ({arm}): {message}")]
    Execution {
        system_id: usize,
        arm: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from the experiment definition rather than from running it.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation(_) | Error::Config(_))
    }
}
