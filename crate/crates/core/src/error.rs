use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {op} got {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("round {round}: {what} violates its constraint by {magnitude:e}")]
    ConstraintViolation {
        round: usize,
        what: String,
        magnitude: f64,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint does not match the policy: {0}")]
    CheckpointMismatch(String),

    #[error("training diverged at step {step}")]
    Divergence { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
