//! Dense linear- and multilinear-algebra kernels.
//!
//! Everything here is a pure function over immutable inputs and safe to
//! call concurrently.

mod decomp;
mod matrix;
mod tensor;

pub use decomp::{
    pinv_psd, solve_spd, spectral_radius, svd, symmetric_eigen, top_k_eigvecs_sym, Svd,
};
pub use matrix::{kronecker, orthonormalize, sin_theta_dist, Matrix};
pub use tensor::{fold, hosvd, mode_product, tucker_reconstruct, unfold, Tensor3};
