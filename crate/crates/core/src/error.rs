use thiserror::Error;

#[derive(Debug, Error)]
pub enum DqeError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("resource limit: {what} needs {requested} qubits, limit is {limit}")]
    ResourceLimit {
        what: String,
        requested: usize,
        limit: usize,
    },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("degenerate instance: {0}")]
    DegenerateInstance(String),
    #[error("invalid AGSP: {0}")]
    InvalidAgsp(String),
    #[error("fixed point undefined: operator norm {norm} is not below 1")]
    SingularFixedPoint { norm: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },
    #[error("ill-conditioned linear system: {0}")]
    IllConditioned(String),
    #[error("invalid instrument: {0}")]
    InvalidInstrument(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("bad stopping history: step {step} precedes last failure {last}")]
    Ordering { step: usize, last: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DqeError {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            DqeError::ResourceLimit { .. } => 3,
            DqeError::SingularFixedPoint { .. }
            | DqeError::Convergence { .. }
            | DqeError::IllConditioned(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, DqeError>;
