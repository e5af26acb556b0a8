use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tramsurv::Error),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("model file {0} does not exist")]
    ModelNotFound(PathBuf),
    #[error("data file {0} does not exist")]
    DataNotFound(PathBuf),
    #[error("row {row}: missing column `{column}`")]
    MissingColumn { row: usize, column: String },
    #[error("row {row}: status `{value}` is not one of exact, right, left, interval")]
    BadStatusValue { row: usize, value: String },
    #[error("row {row}, column `{column}`: `{value}` is not a number")]
    NonNumericCovariate {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: `{value}` is not a valid time")]
    BadTime {
        row: usize,
        column: String,
        value: String,
    },
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Io { .. } => "E_IO",
            CliError::ModelNotFound(_) => "E_MODEL_NOT_FOUND",
            CliError::DataNotFound(_) => "E_DATA_NOT_FOUND",
            CliError::MissingColumn { .. } => "E_MISSING_COLUMN",
            CliError::BadStatusValue { .. } => "E_BAD_STATUS_VALUE",
            CliError::NonNumericCovariate { .. } => "E_NON_NUMERIC_COVARIATE",
            CliError::BadTime { .. } => "E_BAD_TIME",
            CliError::Csv(_) => "E_CSV",
            CliError::Config(_) => "E_CONFIG",
        }
    }

    /// `{"error": {"code": ..., "message": ...}}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": { "code": self.code(), "message": self.to_string() }
        })
        .to_string()
    }

    pub(crate) fn io(path: impl Into<PathBuf>, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.into(),
            message: e.to_string(),
        }
    }
}
