use thiserror::Error;

/// Errors raised by the sampler, the diagnostics and the PDE solver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("eigenvalue {index} is not strictly positive ({value})")]
    NonPositiveEigenvalue { index: usize, value: f64 },

    #[error("eigenvalues must be non-increasing: lambda[{index}] = {next} exceeds its predecessor {prev}")]
    UnsortedSpectrum { index: usize, prev: f64, next: f64 },

    #[error("gamma = {0} is outside [0, 1/2)")]
    GammaOutOfRange(f64),

    #[error("covariance is not trace class: {0}")]
    NotTraceClass(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("projection index N = {n} is outside 1..={dim}")]
    BadN { n: usize, dim: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("integrator tolerance {tol:e} not met after {substeps} substeps (estimate {estimate:e})")]
    ToleranceNotMet { tol: f64, substeps: usize, estimate: f64 },

    #[error("1 + lambda_i B_i <= 0 at index {index}")]
    NegativeFrequencySquared { index: usize },

    #[error("integration time T = {t} exceeds the admissible bound {bound}")]
    TimeConditionViolated { t: f64, bound: f64 },

    #[error("potential does not declare the constants required here: {0}")]
    MissingConstants(String),

    #[error("pendulum shift needs sin T != 0 (T = {0})")]
    PendulumSingularT(f64),

    #[error("preconditions violated: {0}")]
    ConditionsViolated(String),

    #[error("assembled contraction factor is not below one (ln kappa5 = {ln_kappa5:e})")]
    NoSpectralGap { ln_kappa5: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("Lyapunov function overflows at |q|^2 = {0}")]
    Overflow(f64),

    #[error("eta = {eta} is not below its cap {cap}")]
    EtaTooLarge { eta: f64, cap: f64 },

    #[error("drift inequality violated at n = {n}: estimate {estimate} > bound {bound} + 3 stderr ({stderr})")]
    DriftViolated { n: usize, estimate: f64, bound: f64, stderr: f64 },

    #[error("trajectory of length {len} is too short (need at least {needed})")]
    TrajectoryTooShort { len: usize, needed: usize },

    #[error("observable has no gradient")]
    MissingGradient,

    #[error("CFL condition violated: dt = {dt:e} exceeds {limit:e}")]
    CflViolated { dt: f64, limit: f64 },

    #[error("no snapshot stored at t = {0}")]
    MissingSnapshot(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
