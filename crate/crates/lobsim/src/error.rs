use thiserror::Error;

#[derive(Debug, Error)]
pub enum LobError {
    /// A shifted density would carry nonzero mass outside the configured grid domain.
    #[error("domain overflow: support of shifted function exits configured domain (cell {cell})")]
    DomainOverflow { cell: i64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("undefined imbalance: zero total top-of-book volume")]
    UndefinedImbalance,

    #[error("undefined jump size: zero top-of-book volume on the {0} side")]
    UndefinedJump(&'static str),

    #[error("model fault at event {index}: {reason}")]
    ModelFault { index: usize, reason: String },

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("degenerate statistic: {0}")]
    DegenerateStatistic(String),

    #[error("assumption violation: {0}")]
    AssumptionViolation(String),

    #[error("insufficient record: {0}")]
    InsufficientRecord(String),

    #[error("numerical fault: {0}")]
    NumericalFault(String),

    #[error("kernel probe failed: {0}")]
    ProbeError(String),

    #[error("parameter error: {0}")]
    ParameterError(String),

    #[error("construction violation: {0}")]
    ConstructionViolation(String),

    #[error("validation error at `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("ensemble failure: {failed} of {total} paths failed; first: {first}")]
    EnsembleFailure {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LobError>;
