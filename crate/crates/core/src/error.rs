use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("dimension mismatch in `{field}`: {detail}")]
    DimensionMismatch { field: String, detail: String },

    #[error("partition required")]
    PartitionRequired,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("plant is not open-loop stable (spectral radius {0:.6})")]
    Unstable(f64),

    #[error("graph has infinite delay (adjacency matrix is not primitive)")]
    InfiniteDelay,

    #[error("edge ({0},{1}) is invalid: {2}")]
    InvalidEdge(usize, usize, String),

    #[error("design set guard exceeded: {count} edges > {limit}")]
    GuardExceeded { count: usize, limit: usize },

    #[error("base graph fails the QI delay certificate: {0}")]
    NotQi(String),

    #[error("conjugate gradient breakdown at iteration {iter}: {detail}")]
    CgBreakdown { iter: usize, detail: String },

    #[error("solver did not converge after {iters} iterations ({detail})")]
    NotConverged { iters: usize, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
