use thiserror::Error;

/// Errors raised by the kernels, samplers, measures and experiments.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmcError {
    #[error("circle kernel branch is ambiguous for epsilon={epsilon} r={r}: only the epsilon = r branches are defined")]
    AmbiguousBranch { epsilon: f64, r: f64 },
    #[error("quadrature failed to reach tolerance {tol:e} within {max_intervals} intervals (estimated error {estimate:e})")]
    QuadratureFailure { tol: f64, estimate: f64, max_intervals: usize },
    #[error("grid extent {extent} exceeds the admissible length {delta} for the scaled kernel")]
    SpanTooLarge { extent: f64, delta: f64 },
    #[error("covariance is not positive semidefinite: minimum eigenvalue {min_eigenvalue:e} < -{tol:e}")]
    NotPositiveSemidefinite { min_eigenvalue: f64, tol: f64 },
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("lambda must lie in (0,1], got {0}")]
    BadLambda(f64),
    #[error("point or interval [{a}, {b}] outside the domain [{lo}, {hi}]")]
    OutOfDomain { a: f64, b: f64, lo: f64, hi: f64 },
    #[error("requested mass {requested} exceeds the remaining mass {remaining}")]
    OutOfMass { requested: f64, remaining: f64 },
    #[error("measures do not come from one hierarchy draw: {0}")]
    MismatchedHierarchy(String),
    #[error("comparison precondition failed: {0}")]
    PrecheckFailed(String),
    #[error("bad scale config: {0}")]
    BadConfig(String),
    #[error("exact independence number limited to {max} vertices, graph has {n}")]
    TooLargeForExact { n: usize, max: usize },
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("bad parameters: {0}")]
    BadParams(String),
    #[error("exponent {p} out of range for {target}: {constraint}")]
    ExponentOutOfRange { target: String, p: f64, constraint: String },
    #[error("at least {need} trials required, got {got}")]
    InsufficientTrials { got: usize, need: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("empty sample")]
    EmptySample,
    #[error("dyadic domain exceeded: {0}")]
    DomainExceeded(String),
    #[error("geometry violation: {0}")]
    Geometry(String),
    #[error("io error: {0}")]
    Io(String),
}

impl GmcError {
    /// True for failures of numerical procedures, as opposed to violated preconditions.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            GmcError::QuadratureFailure { .. } | GmcError::NotPositiveSemidefinite { .. }
        )
    }
}

impl From<std::io::Error> for GmcError {
    fn from(e: std::io::Error) -> Self {
        GmcError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GmcError>;
