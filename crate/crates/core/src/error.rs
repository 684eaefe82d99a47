use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unstable discretization: dt = {dt} exceeds dx^2/(2 d alpha) = {limit}")]
    Unstable { dt: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index {index} out of range (limit {limit})")]
    OutOfRange { index: usize, limit: usize },

    #[error("problem size {size} exceeds cap {cap}")]
    SizeCap { size: u128, cap: u128 },

    #[error("region is not aligned with the grid: {0}")]
    Misaligned(String),

    #[error("time {t} is not an integer multiple of dt = {dt}")]
    MisalignedTime { t: f64, dt: f64 },

    #[error("initial condition {0} has no closed-form solution")]
    NoClosedForm(&'static str),

    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("root finder found {found} of {expected} roots for gamma = {gamma} (brackets: {brackets})")]
    RootFinding {
        gamma: f64,
        expected: usize,
        found: usize,
        brackets: String,
    },

    #[error("unknown method tag `{0}`")]
    UnknownMethod(String),

    #[error("config error at line {line}: {reason}")]
    Config { line: usize, reason: String },

    #[error("not enough rows for `{method}`: need at least {needed} distinct eps points, got {got}")]
    InsufficientRows {
        method: String,
        needed: usize,
        got: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
