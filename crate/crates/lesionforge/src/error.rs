//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported datatype code {0} (expected 2, 4, or 16)")]
    UnsupportedDatatype(i16),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),

    #[error("retries exhausted: {0}")]
    RetryExhausted(String),

    #[error("no valid location: {0}")]
    NoValidLocation(String),

    #[error("solver did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("blend region is empty")]
    EmptyRegion,

    #[error("no voxel carries label {0}")]
    EmptyClass(u8),

    #[error("zero-norm vector in cosine similarity")]
    ZeroNormVector,

    #[error("no batch item contains both lesion classes")]
    NoContributingItems,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
