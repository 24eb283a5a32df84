//! High-dimensional vector autoregressions with common response and
//! predictor factor subspaces.
//!
//! The coefficient matrix of a reduced-rank VAR(1) factors as
//! `A = [C R] D [C P]'`, where `C` spans the subspace shared by the
//! response and predictor factor spaces and `R`, `P` span their specific
//! complements. For VAR(ℓ) the coefficient tensor factors as
//! `A = G ×₁ [C R] ×₂ [C P] ×₃ L` with a lag factor `L`. This crate
//! provides:
//!
//! - dense linear- and multilinear-algebra kernels ([`linalg`]),
//! - the factored model types and reconstruction ([`model`]),
//! - regularized gradient-descent estimators, dense and row-sparse
//!   ([`estimator`]),
//! - spectral and rank-constrained initializers ([`initializer`]),
//! - ridge-ratio rank selection and BIC common-dimension selection
//!   ([`selector`]),
//! - data-generating processes and a Monte-Carlo harness ([`simulator`]),
//! - multi-step and rolling-origin forecasting ([`forecaster`]).

pub mod error;
pub mod estimator;
pub mod forecaster;
pub mod initializer;
pub mod linalg;
pub mod model;
pub mod panel;
pub mod selector;
pub mod simulator;

pub use error::{Error, Result};
pub use linalg::{Matrix, Svd, Tensor3};
pub use model::{Model, ModelDiagnostics, Params, Var1CsParams, VarLCsParams};
pub use panel::TimePanel;
