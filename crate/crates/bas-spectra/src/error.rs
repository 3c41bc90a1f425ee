//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown flow name `{0}` (expected constant, shear, cellular, or abc)")]
    UnknownFlow(String),
    #[error("flow `{name}` expects {expected} parameter(s), got {got}")]
    WrongArity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("velocity field is not divergence-free: |tr J| = {trace:.3e} at sample point")]
    NotDivergenceFree { trace: f64 },
    #[error("unknown equation `{0}`")]
    UnknownEquation(String),
    #[error("equation `{equation}` requires equilibrium data `{field}`")]
    MissingEquilibrium { equation: String, field: String },
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("step size underflow at t = {t:.6e} (reached h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("integrator exceeded {max_steps} steps at t = {t:.6e}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("initial amplitude violates the frequency constraint: |(id - p)b0| = {residual:.3e}")]
    ConstraintViolated { residual: f64 },
    #[error("custom frequency bundle requires a projector gradient for the general transform")]
    MissingProjectorGradient,
    #[error("trajectories do not share an initial phase point")]
    MismatchedInitialPhase,
    #[error("determinant law needs fiber dimension d = n; got d = {d}, n = {n}")]
    DeterminantLawDimension { d: usize, n: usize },
    #[error("spectral truncation too small: need |carrier| + envelope <= N/2, carrier {carrier}, N {n}")]
    TruncationTooSmall { carrier: i64, n: usize },
    #[error("time-step instability: field norm {norm:.3e} exceeded allowed growth at t = {t:.4}")]
    TimeStepInstability { t: f64, norm: f64 },
    #[error("generator truncation N = {n} too large for dense diagnostics (max {max})")]
    TruncationTooLarge { n: usize, max: usize },
    #[error("config error at `{location}`: {message}")]
    Config { location: String, message: String },
    #[error("sampler: {0}")]
    Sampler(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
