//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for simulation, estimation, and statistics.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched array or matrix dimensions.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A simulated state left the admissible region (norm above the explosion
    /// guard), which signals a mis-specified model or step size.
    #[error("trajectory diverged at step {step}: |state| = {norm:.3e} exceeds {limit:.1e}")]
    Divergence { step: usize, norm: f64, limit: f64 },

    /// Configuration-level problem: unknown model, missing parameter, a value
    /// out of range, or an unparsable config file.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Numeric failure inside a linear-algebra or accumulation routine.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Requested estimator order exceeds the numerically available rank.
    #[error("rank deficiency: requested order {requested} but effective rank is {rank}")]
    RankDeficient { requested: usize, rank: usize },

    /// The kernel does not provide the quantity required by the operation.
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    /// A matrix expected to be positive definite was not; typically means the
    /// diffusion estimate is too noisy for the requested factorization.
    #[error("degenerate matrix: {0}; try a larger sample size or smaller time step")]
    Degenerate(String),

    /// Every point of a scaling sweep fell below its Monte Carlo noise floor.
    #[error("inconclusive scaling: {0}; rerun with longer trajectories or larger perturbations")]
    InconclusiveScaling(String),

    /// File-system problem while persisting or loading artifacts.
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed persisted document.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
