use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("observation {index}: time must be positive and finite (got {time})")]
    NonPositiveTime { index: usize, time: f64 },
    #[error("evaluation time must be positive and finite (got {0})")]
    NonPositiveEvalTime(f64),
    #[error("observation {index}: upper time {upper} is below lower time {lower}")]
    InvertedInterval {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("observation {index}: {reason}")]
    InconsistentCensoring { index: usize, reason: String },
    #[error("observation {index}: expected {expected} covariates, found {found}")]
    RaggedCovariates {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("observation {index}: covariate {column} is not finite")]
    NonFiniteCovariate { index: usize, column: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("every observation is censored; the likelihood has no density term")]
    AllCensored,
    #[error("malformed model artifact: {0}")]
    MalformedArtifact(String),
    #[error("artifact schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { expected: u32, found: u32 },
    #[error("invalid Bernstein order {0}; must be at least 1")]
    InvalidOrder(usize),
    #[error("probability {0} is outside the open interval (0, 1)")]
    ProbabilityOutOfRange(f64),
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("tape does not match the extractor layout")]
    TapeMismatch,
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("no comparable pairs for the concordance index")]
    NoComparablePairs,
    #[error("censoring kind {0} is not supported by the log-score")]
    UnsupportedCensoringKind(&'static str),
    #[error("quadrature did not converge (last two estimates {previous} and {current})")]
    QuadratureNonConvergence { previous: f64, current: f64 },
    #[error("dataset has {found} covariates but the model expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable machine-readable code, surfaced by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NonPositiveTime { .. } => "E_NON_POSITIVE_TIME",
            Error::NonPositiveEvalTime(_) => "E_NON_POSITIVE_TIME",
            Error::InvertedInterval { .. } => "E_INVERTED_INTERVAL",
            Error::InconsistentCensoring { .. } => "E_INCONSISTENT_CENSORING",
            Error::RaggedCovariates { .. } => "E_RAGGED_COVARIATES",
            Error::NonFiniteCovariate { .. } => "E_NON_FINITE_COVARIATE",
            Error::EmptyDataset => "E_EMPTY_DATASET",
            Error::AllCensored => "E_ALL_CENSORED",
            Error::MalformedArtifact(_) => "E_MALFORMED_ARTIFACT",
            Error::SchemaVersionMismatch { .. } => "E_SCHEMA_VERSION_MISMATCH",
            Error::InvalidOrder(_) => "E_INVALID_ORDER",
            Error::ProbabilityOutOfRange(_) => "E_PROBABILITY_OUT_OF_RANGE",
            Error::DimensionMismatch { .. } => "E_DIMENSION_MISMATCH",
            Error::TapeMismatch => "E_TAPE_MISMATCH",
            Error::InvalidSpec(_) => "E_INVALID_SPEC",
            Error::InvalidConfig(_) => "E_INVALID_CONFIG",
            Error::NonFiniteLoss { .. } => "E_NON_FINITE_LOSS",
            Error::NoComparablePairs => "E_NO_COMPARABLE_PAIRS",
            Error::UnsupportedCensoringKind(_) => "E_UNSUPPORTED_CENSORING_KIND",
            Error::QuadratureNonConvergence { .. } => "E_QUADRATURE_NON_CONVERGENCE",
            Error::SchemaMismatch { .. } => "E_SCHEMA_MISMATCH",
            Error::InvalidArgument(_) => "E_INVALID_ARGUMENT",
        }
    }
}
