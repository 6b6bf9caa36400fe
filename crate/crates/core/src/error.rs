use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TfdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TfdError {
    #[error("density series has zero total mass")]
    ZeroMass,

    #[error("density series are defined on different time grids")]
    GridMismatch,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("value outside its domain: {0}")]
    Domain(String),

    #[error("{t} cal BP is outside the calibration curve span [{lo}, {hi}]")]
    OutOfCurveRange { t: f64, lo: f64, hi: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("expected {expected} aligned records, found {found}")]
    Alignment { expected: usize, found: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate calibration knot at {cal_bp} cal BP")]
    DuplicateKnot { cal_bp: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid record {id}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl TfdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TfdError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, TfdError::Io { .. })
    }
}
