//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("matrix is rank deficient (column rank < {wanted})")]
    RankDeficient { wanted: usize },

    #[error("degenerate design: all singular values of X X' fall below the pseudo-inverse cutoff")]
    DegenerateDesign,

    #[error("coefficients are non-stationary (spectral radius {radius})")]
    NonStationary { radius: f64 },

    #[error("objective diverged at iteration {at_iter} (value {value:e})")]
    Divergence {
        at_iter: usize,
        value: f64,
        trajectory: Vec<f64>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("data generation failed: {0} consecutive draws rejected")]
    DgpRejection(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("panel error: {0}")]
    Panel(String),
}
