use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("sample times are not strictly increasing at index {index}")]
    NonMonotoneTimes { index: usize },

    #[error("path must start at zero, found |W(0)| = {norm}")]
    NonzeroStart { norm: f64 },

    #[error("time {time} lies outside [{start}, {end}]")]
    TimeOutOfRange { time: f64, start: f64, end: f64 },

    #[error("rough path validation failed: {0}")]
    InvalidLift(String),

    #[error("index {index} out of range for {len} components")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("expression error: {0}")]
    Expression(String),

    #[error("flow mode {mode} is not compatible with this system: {reason}")]
    ModeMismatch { mode: &'static str, reason: String },

    #[error("characteristic diverged at t = {time} (|x| or |p| above {limit:e})")]
    Diverged { time: f64, limit: f64 },

    #[error("invertibility horizon exceeded: min det D_x X = {min_det} < {theta_inv}")]
    HorizonExceeded { min_det: f64, theta_inv: f64 },

    #[error("inverse map did not converge at node {node} (residual {residual:e})")]
    InverseNonConvergence { node: usize, residual: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("step restriction violated: dt = {dt} exceeds the required dt <= {required}")]
    StepRestriction { dt: f64, required: f64 },

    #[error("non-finite value produced at step {step}")]
    NonFinite { step: usize },

    #[error("drift operator unbounded on the sampled ball of radius {radius}")]
    UnboundedDrift { radius: f64 },

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("infeasible bump specification: {0}")]
    InfeasibleBump(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
