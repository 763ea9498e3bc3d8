use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: precondition violated: {msg}")]
    Precondition { op: &'static str, msg: String },

    #[error("dimension mismatch at {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("decomposition did not converge for a {rows}x{cols} matrix")]
    DecompositionFailed { rows: usize, cols: usize },

    #[error("rank is undefined for an all-zero matrix")]
    UndefinedRank,

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("training diverged at epoch {epoch} (regularizers: {regularizers})")]
    Divergence { epoch: usize, regularizers: String },

    #[error("transform is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),

    #[error("covariance has no null space (rank {rank} of {units})")]
    NoNullSpace { rank: usize, units: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition(op: &'static str, msg: impl Into<String>) -> Error {
    Error::Precondition {
        op,
        msg: msg.into(),
    }
}
