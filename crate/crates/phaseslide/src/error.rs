//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Configuration file or constructor argument violates a model assumption.
    #[error("config error: {0}")]
    Config(String),

    /// Initial data or target violates the potential domain; carries the full
    /// per-node report.
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// An iterative linear solve did not reach its tolerance within the
    /// iteration cap. Carries the tail of the residual history.
    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:.3e}); history tail: {history:?}")]
    LinearSolve {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// The semismooth Newton iteration for the phase step hit its cap.
    #[error("Newton failed at step {step} after {iterations} iterations; last residual sup-norm {residual:.3e}")]
    Newton {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    /// A scalar resolvent solve failed to converge (monotone scalar equation;
    /// should be unreachable).
    #[error("scalar resolvent solve failed: {0}")]
    ScalarSolve(String),

    /// Two fields live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// A certificate field required by the operation is absent.
    #[error("certificate error: {0}")]
    Certificate(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
