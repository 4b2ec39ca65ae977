use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solvers and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its admissible range.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    /// Dense storage would exceed the configured node cap.
    #[error("operator too large: {nodes} interior nodes exceeds the cap of {cap}")]
    TooLarge { nodes: usize, cap: usize },

    #[error("field mismatch: {0}")]
    Mismatch(String),

    /// An iterative method hit its iteration cap.
    #[error("{method} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    /// `residual_nonlinear` requires an s-subharmonic state.
    #[error("state is not s-subharmonic: max (-Δ)^s U = {max_u:.3e}, max (-Δ)^s U+ = {max_plus:.3e}")]
    NotSubharmonic { max_u: f64, max_plus: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
