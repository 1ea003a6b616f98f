use thiserror::Error;

/// Errors produced by the anticipation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is indefinite (eigenvalue {eigenvalue:e} below tolerance {tolerance:e})")]
    IndefiniteMatrix { eigenvalue: f64, tolerance: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("mixture has no mixands")]
    EmptyMixture,

    #[error("covariance is singular; regularize before splitting")]
    SingularCovariance,

    #[error("split sigma must lie in (0, 1], got {0}")]
    InvalidSigma(f64),

    #[error("N must be odd and positive, got {0}")]
    InvalidSplitCount(usize),

    #[error("split library has no entry for N={n}, sigma={sigma}")]
    MissingSplit { n: usize, sigma: f64 },

    #[error("invalid split library: {0}")]
    InvalidLibrary(String),

    #[error("weight QP is infeasible")]
    QpInfeasible,

    #[error("solver exceeded {0} iterations")]
    MaxIterations(usize),

    #[error("model evaluation failed for mixand {mixand}: {reason}")]
    ModelEvaluation { mixand: String, reason: String },

    #[error("discrete state {0} has no successors")]
    NoSuccessor(String),

    #[error("variance is zero; correlation is undefined")]
    DegenerateVariance,

    #[error("density is not finite at x={0}")]
    NonFiniteDensity(f64),

    #[error("no frame within half a step of observation time {0}")]
    NoFrameMatch(f64),

    #[error("timestamps are misaligned: {0}")]
    MisalignedTimestamps(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown road segment {0}")]
    UnknownSegment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
