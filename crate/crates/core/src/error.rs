use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not Hermitian (deviation {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("real Hessian is not symmetric (deviation {deviation:e})")]
    NotSymmetric { deviation: f64 },

    #[error(
        "metric is not positive definite (smallest eigenvalue {smallest:e}, largest {largest:e})"
    )]
    NotPositiveDefinite { smallest: f64, largest: f64 },

    #[error("m = {m} out of range 1..={n}")]
    OrderOutOfRange { m: usize, n: usize },

    #[error("spectrum outside the closed cone (minimal m-sum {margin:e})")]
    OutsideCone { margin: f64 },

    #[error("spectrum on the cone boundary (minimal m-sum {margin:e})")]
    OnConeBoundary { margin: f64 },

    #[error("determinant of the derivation matrix is not positive ({det:e})")]
    NonPositiveDeterminant { det: f64 },

    #[error("curvature hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("level out of range: {0}")]
    LevelOutOfRange(String),

    #[error("node {node} too close to the boundary for the stencil")]
    StencilOutOfDomain { node: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("no damped step keeps the iterate inside the cone (iteration {iteration}, margin {margin:e})")]
    ConeEscape { iteration: usize, margin: f64 },

    #[error("ill-posed right-hand side at node {node}: {reason}")]
    IllPosedRhs { node: usize, reason: String },

    #[error("chi is not strictly m-positive (margin {margin:e})")]
    ChiNotPositive { margin: f64 },

    #[error("linear solve failed: relative residual {residual:e} after {iterations} iterations")]
    LinearSolveFailed { iterations: usize, residual: f64 },

    #[error("continuity path failed at t = {t}: {source}")]
    PathStepFailed { t: f64, source: Box<Error> },

    #[error("Dirichlet solve failed for index {index}: {source}")]
    DirichletFailure { index: usize, source: Box<Error> },

    #[error("schedule exhausted: {0}")]
    ScheduleExhausted(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("target not admissible: {0}")]
    TargetNotAdmissible(String),

    #[error("target is identically -inf")]
    TargetIdenticallyNegInfinite,

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Format(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_order(m: usize, n: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::OrderOutOfRange { m, n });
    }
    Ok(())
}
