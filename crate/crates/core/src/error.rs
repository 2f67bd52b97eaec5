use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("singular matrix: pivot {pivot:e} below threshold {threshold:e}")]
    Singular { pivot: f64, threshold: f64 },

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("operation not supported by this problem: {0}")]
    Unsupported(&'static str),

    #[error("missing problem constant: {0}")]
    MissingConstant(&'static str),

    #[error("phase violation: {0}")]
    PhaseViolation(&'static str),

    #[error("horizon {horizon} is shorter than burn-in length {burn_in}")]
    HorizonTooShort { horizon: usize, burn_in: usize },

    #[error("step size {eta} exceeds the ceiling {ceiling} of the declared setting")]
    StepSizeAboveCeiling { eta: f64, ceiling: f64 },

    #[error("need at least {required} replicates, got {found}")]
    InsufficientReplicates { required: usize, found: usize },

    #[error("linear solve residual {residual:e} exceeds tolerance {tolerance:e}")]
    SolveResidual { residual: f64, tolerance: f64 },

    #[error("insufficient span for slope fit: {0}")]
    InsufficientSpan(String),
}
