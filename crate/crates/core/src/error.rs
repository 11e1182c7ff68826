use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("iteration limit of {sweeps} sweeps reached (final residual {residual:e})")]
    IterationLimit { sweeps: usize, residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected} inputs, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("overlap violation: behavior probability is zero for observed pair (state {state}, action {action})")]
    OverlapViolation { state: usize, action: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
