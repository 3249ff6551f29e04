use thiserror::Error;

/// Errors raised by the simulator, calculators and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("label error: {0}")]
    Label(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("graph is not connected")]
    Disconnected,

    #[error("connectivity not reached after {attempts} attempts")]
    ConnectivityBudget { attempts: usize },

    #[error("inner solver did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    SolverNonConvergence { iterations: usize, grad_norm: f64 },

    #[error("node {node} failed at iteration {iteration}: {source}")]
    NodeFailure {
        node: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("regime violation: {0}")]
    Regime(String),

    #[error("trace not converged: final residual {residual:e} exceeds {tolerance:e}")]
    NotConverged { residual: f64, tolerance: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn at_node(self, node: usize, iteration: usize) -> Self {
        Error::NodeFailure { node, iteration, source: Box::new(self) }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

pub(crate) fn require_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {value}")))
    }
}
