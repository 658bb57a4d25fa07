use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty dataset: {0}")]
    EmptyData(&'static str),

    #[error("rank-deficient regressor matrix: {0}")]
    RankDeficient(String),

    #[error("DARE iteration did not converge after {sweeps} sweeps (last residual {residual:.3e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("critical-gain search failed: {0}")]
    SearchFailure(String),

    #[error("training diverged (non-finite loss) at {0}")]
    TrainingDiverged(String),

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("rollout aborted: {0}")]
    RolloutAborted(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
