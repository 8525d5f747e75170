//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by grid operations, elliptic solvers, geometry queries and
/// the time stepper.
#[derive(Debug, Error)]
pub enum IbisError {
    /// A field was supplied at the wrong staggering location
    /// (e.g. a cell-centered field where a corner field is required).
    #[error("field location mismatch: expected {expected}, got {got}")]
    LocationMismatch {
        expected: &'static str,
        got: &'static str,
    },

    /// Field dimensions do not match the grid or each other.
    #[error("shape mismatch: expected {expected_nx}x{expected_ny}, got {got_nx}x{got_ny}")]
    ShapeMismatch {
        expected_nx: usize,
        expected_ny: usize,
        got_nx: usize,
        got_ny: usize,
    },

    /// Invalid grid dimensions (too small, zero lengths, ...).
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// The Poisson right-hand side has a mean that is too large relative to
    /// its magnitude; the periodic problem is incompatible.
    #[error("pressure rhs is not mean-zero: |mean| = {mean:.3e} exceeds 1e-12 * linf = {bound:.3e}")]
    IncompatibleRhs { mean: f64, bound: f64 },

    /// An iterative solver failed to reach its tolerance.
    #[error("{solver} did not converge: residual {residual:.3e} after {cycles} cycles (target {target:.3e})")]
    SolverDiverged {
        solver: &'static str,
        cycles: usize,
        residual: f64,
        target: f64,
    },

    /// A boundary has a degenerate (zero-length) tangent at some vertex.
    #[error("degenerate tangent at boundary point {index}")]
    DegenerateTangent { index: usize },

    /// A Lagrangian point has a non-finite position or force.
    #[error("non-finite value at boundary point {index}")]
    NonFinite { index: usize },

    /// A NaN or infinity appeared in the fluid state during time stepping.
    #[error("non-finite fluid state detected at step {step} (t = {time})")]
    NumericalBlowup { step: usize, time: f64 },

    /// Bad run/scenario configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// I/O and parse failures for dump/checkpoint files.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A dump or checkpoint file failed to parse.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, IbisError>;
