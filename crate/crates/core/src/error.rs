use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension must be at least 1")]
    ZeroDimension,

    #[error("index set would hold {requested} terms, above the cap of {cap}")]
    IndexSetTooLarge { requested: u128, cap: usize },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("coordinate {coord} out of range 1..={dim}")]
    CoordinateOutOfRange { coord: usize, dim: usize },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("map is not monotone at {point:?}: {detail}")]
    NonMonotoneAtPoint { point: Vec<f64>, detail: String },

    #[error("operation requires a Knothe-Rosenblatt map, got {0}")]
    UnsupportedStructure(&'static str),

    #[error("no sign-changing bracket for coordinate {coord} within |x| <= {limit}")]
    BracketNotFound { coord: usize, limit: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("eigendecomposition of the Jacobian block failed for sample {sample}")]
    Eigen { sample: usize },

    #[error("projection onto monotone maps failed: {0}")]
    Projection(String),

    #[error("basis Gram factorization failed (degenerate basis for these samples)")]
    DegenerateBasis,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("unsupported document version {found} (this build reads version {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("missing value at row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("non-numeric cell '{value}' at row {row}, column '{column}'")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("column '{0}' not found")]
    MissingColumn(String),

    #[error("column '{0}' has zero standard deviation and cannot be standardized")]
    Standardization(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at_stage(self, stage: usize) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
