use thiserror::Error;

/// Errors produced anywhere in the estimation, classification and benchmark pipeline.
#[derive(Debug, Error)]
pub enum FemdaError {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("invalid shape parameter {0}")]
    InvalidShape(f64),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("too few points: need at least {needed}, got {found}")]
    TooFewPoints { needed: usize, found: usize },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("class '{label}' has {count} training points, need at least {needed}")]
    ClassTooSmall {
        label: String,
        count: usize,
        needed: usize,
    },

    #[error("estimation failed for class '{label}': {source}")]
    EstimationFailed {
        label: String,
        #[source]
        source: Box<FemdaError>,
    },

    #[error("model has no GQDA threshold")]
    MissingThreshold,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no center supplied for class '{0}'")]
    MissingCenter(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("file contains no data rows")]
    EmptyFile,

    #[error("preprocessing dropped every row")]
    AllRowsDropped,

    #[error("preprocessing dropped every class")]
    AllClassesDropped,

    #[error("repetition {rep}: {source}")]
    Repetition {
        rep: usize,
        #[source]
        source: Box<FemdaError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, FemdaError>;
