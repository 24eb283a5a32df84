//! Spectral initialization for the gradient-descent estimators.
//!
//! - [`reduced_rank_var1`]: the closed-form reduced-rank VAR estimator
//!   whose SVD seeds the VAR(1) common-subspace extraction.
//! - [`extract_common`]: splits the response and predictor singular
//!   subspaces into common and specific parts via projector algebra.
//! - [`rank_constrained_varl`]: alternating least squares for the
//!   Tucker-rank-constrained VAR(ℓ) estimator, HOSVD-initialized.
//! - [`sparse_init_var1`]: L1 least squares followed by the spectral
//!   construction and row hard-thresholding.

use crate::error::{Error, Result};
use crate::estimator::{hard_threshold_rows, lasso_var1, GdConfig, GramData, SparsityLevels};
use crate::linalg::{
    fold, hosvd, kronecker, mode_product, pinv_psd, solve_spd, svd, symmetric_eigen,
    top_k_eigvecs_sym, tucker_reconstruct, unfold, Matrix, Svd, Tensor3,
};
use crate::model::{Var1CsParams, VarLCsParams};
use crate::panel::TimePanel;

/// Reduced-rank VAR(1) estimator `A = H H' Y X' (X X')^{-1}` with `H` the
/// top-`rank` eigenvectors of `Y X'(X X')^{-1} X Y'`.
#[derive(Clone, Debug)]
pub struct ReducedRankFit {
    pub a_hat: Matrix,
    pub rank: usize,
    /// SVD of `a_hat`; singular values beyond `rank` are numerically zero.
    pub svd: Svd,
}

pub fn reduced_rank_var1(y: &Matrix, x: &Matrix, rank: usize) -> Result<ReducedRankFit> {
    let p = y.rows();
    if rank == 0 || rank > p {
        return Err(Error::InvalidArg(format!(
            "reduced_rank_var1: rank {rank} out of range 1..={p}"
        )));
    }
    let gram = GramData::new(y, x)?;
    let sxx_inv = pinv_psd(&gram.s_xx)?;
    let proj = gram.s_yx.matmul(&sxx_inv);
    let m = proj.matmul_nt(&gram.s_yx);
    let h = top_k_eigvecs_sym(&m, rank)?;
    let a_hat = h.matmul(&h.matmul_tn(&proj));
    let f = svd(&a_hat)?;
    Ok(ReducedRankFit {
        a_hat,
        rank,
        svd: f,
    })
}

/// Common and specific subspaces extracted from orthonormal response and
/// predictor factors.
#[derive(Clone, Debug)]
pub struct CommonFactors {
    pub common: Matrix,
    pub resp: Matrix,
    pub pred: Matrix,
    /// Set when fewer than `d` eigenvalues of the common-space matrix
    /// exceed 1e-10; the top-`d` eigenvectors are still returned so that
    /// selection can probe over-large `d`.
    pub weak_common: bool,
}

/// Splits `span(u)` and `span(v)` into common and specific parts.
///
/// `resp` spans the top `r1 - d` left singular vectors of
/// `U U'(I - V V')`, `pred` the top `r2 - d` of `V V'(I - U U')`, and
/// `common` the top `d` eigenvectors of the doubly-projected sum
/// `Qr Qp (U U' + V V') Qr Qp` with `Q* = I - (specific projector)`.
pub fn extract_common(u: &Matrix, v: &Matrix, d: usize) -> Result<CommonFactors> {
    let p = u.rows();
    if v.rows() != p {
        return Err(Error::ShapeMismatch {
            op: "extract_common",
            expected: format!("{p} rows"),
            got: format!("{}", v.rows()),
        });
    }
    let r1 = u.cols();
    let r2 = v.cols();
    if d > r1.min(r2) {
        return Err(Error::InvalidArg(format!(
            "extract_common: d = {d} exceeds min(r1, r2) = {}",
            r1.min(r2)
        )));
    }
    let pu = u.matmul_nt(u);
    let pv = v.matmul_nt(v);
    let eye = Matrix::identity(p);
    let resp = svd(&pu.matmul(&eye.sub(&pv)))?.u.columns(0, r1 - d);
    let pred = svd(&pv.matmul(&eye.sub(&pu)))?.u.columns(0, r2 - d);
    let (common, weak_common) = if d == 0 {
        (Matrix::zeros(p, 0), false)
    } else {
        let qr = eye.sub(&resp.matmul_nt(&resp));
        let qp = eye.sub(&pred.matmul_nt(&pred));
        let qrp = qr.matmul(&qp);
        let center = qrp.matmul(&pu.add(&pv)).matmul(&qrp);
        let (vals, vecs) = symmetric_eigen(&center)?;
        (vecs.columns(0, d), vals[d - 1] <= 1e-10)
    };
    Ok(CommonFactors {
        common,
        resp,
        pred,
        weak_common,
    })
}

/// Spectral initialization for the VAR(1) algorithm: factors from
/// [`extract_common`] on the reduced-rank SVD, core `D = [C R]' A [C P]`,
/// scaled as `(bC, bR, bP, D/b^2)`.
pub fn spectral_init_var1(rr: &ReducedRankFit, d: usize, b: f64) -> Result<Var1CsParams> {
    if !(b > 0.0) {
        return Err(Error::InvalidArg("spectral_init_var1: b must be positive".into()));
    }
    let r = rr.rank;
    let u = rr.svd.u.columns(0, r);
    let v = rr.svd.v.columns(0, r);
    let cf = extract_common(&u, &v, d)?;
    let left = cf.common.hcat(&cf.resp);
    let right = cf.common.hcat(&cf.pred);
    let core = left.matmul_tn(&rr.a_hat).matmul(&right);
    Var1CsParams::new(
        cf.common.scale(b),
        cf.resp.scale(b),
        cf.pred.scale(b),
        core.scale(1.0 / (b * b)),
        b,
    )
}

/// Tucker-rank-constrained least-squares estimator of the VAR(ℓ)
/// coefficient tensor.
#[derive(Clone, Debug)]
pub struct RankConstrainedFit {
    /// The estimated `p x p x lag` coefficient tensor.
    pub tensor: Tensor3,
    /// HOSVD of `tensor` at the requested ranks.
    pub core: Tensor3,
    pub u1: Matrix,
    pub u2: Matrix,
    pub u3: Matrix,
    pub sweeps_used: usize,
}

pub fn rank_constrained_varl(
    panel: &TimePanel,
    lag: usize,
    ranks: (usize, usize, usize),
) -> Result<RankConstrainedFit> {
    let (y, x) = panel.design(lag)?;
    rank_constrained_varl_design(&y, &x, lag, ranks)
}

const ALS_MAX_SWEEPS: usize = 200;
const ALS_REL_TOL: f64 = 1e-8;

/// ALS over the Tucker factors, fixing all but one block and solving the
/// induced least-squares problem, initialized by HOSVD of the
/// unconstrained least-squares tensor.
pub fn rank_constrained_varl_design(
    y: &Matrix,
    x: &Matrix,
    lag: usize,
    ranks: (usize, usize, usize),
) -> Result<RankConstrainedFit> {
    let p = y.rows();
    let (r1, r2, r3) = ranks;
    if x.rows() != p * lag || y.cols() != x.cols() {
        return Err(Error::ShapeMismatch {
            op: "rank_constrained_varl",
            expected: format!("X of shape {}x{}", p * lag, y.cols()),
            got: format!("{:?}", x.shape()),
        });
    }
    if r1 == 0 || r2 == 0 || r3 == 0 || r1 > p || r2 > p || r3 > lag {
        return Err(Error::InvalidArg(format!(
            "rank_constrained_varl: ranks {ranks:?} invalid for p = {p}, lag = {lag}"
        )));
    }
    let t_len = y.cols();
    let dims = (p, p, lag);
    let gram = GramData::new(y, x)?;

    // HOSVD warm start from the unconstrained least squares.
    let a_ls = gram.s_yx.matmul(&pinv_psd(&gram.s_xx)?);
    let ls_tensor = fold(&a_ls, 1, dims)?;
    let (mut g, mut u1, mut u2, mut u3) = hosvd(&ls_tensor, ranks)?;

    let objective = |g: &Tensor3, u1: &Matrix, u2: &Matrix, u3: &Matrix| -> Result<f64> {
        let t = tucker_reconstruct(g, u1, u2, u3)?;
        Ok(gram.loss(&unfold(&t, 1)))
    };
    let mut obj_prev = objective(&g, &u1, &u2, &u3)?;
    let obj_scale = (0.5 * gram.syy_tr).max(f64::MIN_POSITIVE);
    let mut sweeps_used = 0;

    // Per-lag predictor blocks X_k, each p x T.
    let x_blocks: Vec<Matrix> = (0..lag)
        .map(|k| x.block(k * p, (k + 1) * p, 0, t_len))
        .collect();

    for sweep in 1..=ALS_MAX_SWEEPS {
        // Compressed predictors q_t = K_t U3, stored per lag-rank slab:
        // qs[i3](j, t) = sum_k U3(k, i3) x_t(k p + j).
        let qs: Vec<Matrix> = (0..r3)
            .map(|i3| {
                let mut acc = Matrix::zeros(p, t_len);
                for k in 0..lag {
                    acc.axpy(u3.get(k, i3), &x_blocks[k]);
                }
                acc
            })
            .collect();
        let g_slices = g.frontal_slices();

        // --- U1 update: plain regression of Y on W = G_(1) vec(U2' q_t).
        let s_rows: Vec<Matrix> = (0..r3).map(|i3| u2.matmul_tn(&qs[i3])).collect();
        // w = sum_{i3} G^{(i3)} (U2' q^{(i3)}), shape r1 x T.
        let mut w = Matrix::zeros(r1, t_len);
        for i3 in 0..r3 {
            w = w.add(&g_slices[i3].matmul(&s_rows[i3]));
        }
        let wwt = w.matmul_nt(&w);
        let ywt = y.matmul_nt(&w);
        let u1_new = solve_spd(&wwt, &ywt.transpose())?.transpose();
        let (q1, t1) = orthonormalize_with_factor(&u1_new)?;
        u1 = q1;
        g = mode_product(&g, &t1, 1)?;

        // --- U2 update: least squares in U2 with (G, U1, U3) fixed.
        // Over vec(U2) with index (j, a) -> j r2 + a, the normal matrix is
        // sum_{i3, j3} Wq^{i3 j3} (x) Gamma^{i3 j3} with
        // Wq^{i3 j3} = q^{(i3)} q^{(j3)'} and Gamma^{i3 j3} = G^{(i3)'} G^{(j3)}.
        let y_c = u1.matmul_tn(y); // r1 x T
        let g_slices = g.frontal_slices();
        let n2 = p * r2;
        let mut normal = Matrix::zeros(n2, n2);
        for i3 in 0..r3 {
            for j3 in i3..r3 {
                let wq = qs[i3].matmul_nt(&qs[j3]);
                let gamma = g_slices[i3].matmul_tn(&g_slices[j3]);
                let block = kronecker(&wq, &gamma);
                normal.axpy(1.0, &block);
                if j3 > i3 {
                    // The (j3, i3) term is the transpose of the (i3, j3) one.
                    normal.axpy(1.0, &block.transpose());
                }
            }
        }
        let mut rhs = Matrix::zeros(p, r2);
        for i3 in 0..r3 {
            // H^{(i3)} = G^{(i3)'} Y_c, shape r2 x T; rhs += q^{(i3)} H'.
            let h = g_slices[i3].matmul_tn(&y_c);
            rhs = rhs.add(&qs[i3].matmul_nt(&h));
        }
        let rhs_vec = Matrix::from_raw(n2, 1, rhs.data().to_vec());
        let sol = solve_spd(&normal, &rhs_vec)?;
        let u2_new = Matrix::from_raw(p, r2, sol.data().to_vec());
        let (q2, t2) = orthonormalize_with_factor(&u2_new)?;
        u2 = q2;
        g = mode_product(&g, &t2, 2)?;

        // --- U3 update: least squares in U3 with (G, U1, U2) fixed.
        // With m_t = U2' K_t (r2 x lag), the normal entry over vec(U3)
        // indexed (k, i3) -> k r3 + i3 is
        //   sum_t m_t(:,k)' Gamma^{i3 j3} m_t(:,k') = <Gamma^{i3 j3}, S^{k k'}>
        // where S^{k k'} = n_k n_k'' stacks the per-lag compressed series.
        let g_slices = g.frontal_slices();
        let n3 = lag * r3;
        let mut normal3 = Matrix::zeros(n3, n3);
        let mut rhs3 = vec![0.0; n3];
        let y_c = u1.matmul_tn(y);
        let n_blocks: Vec<Matrix> = (0..lag).map(|k| u2.matmul_tn(&x_blocks[k])).collect();
        let gtg: Vec<Vec<Matrix>> = (0..r3)
            .map(|i3| {
                (0..r3)
                    .map(|j3| g_slices[i3].matmul_tn(&g_slices[j3]))
                    .collect()
            })
            .collect();
        for k in 0..lag {
            for kp in 0..lag {
                let s_kk = n_blocks[k].matmul_nt(&n_blocks[kp]); // r2 x r2
                for i3 in 0..r3 {
                    for j3 in 0..r3 {
                        let v = normal3.get(k * r3 + i3, kp * r3 + j3)
                            + gtg[i3][j3].dot(&s_kk);
                        normal3.set(k * r3 + i3, kp * r3 + j3, v);
                    }
                }
            }
        }
        for i3 in 0..r3 {
            let h = g_slices[i3].matmul_tn(&y_c); // r2 x T
            for k in 0..lag {
                rhs3[k * r3 + i3] = h.dot(&n_blocks[k]);
            }
        }
        let rhs3m = Matrix::from_raw(n3, 1, rhs3);
        let sol3 = solve_spd(&normal3, &rhs3m)?;
        let u3_new = Matrix::from_raw(lag, r3, sol3.data().to_vec());
        // The core is re-solved next, so only the orthonormal factor of
        // the U3 update is needed.
        u3 = crate::linalg::orthonormalize(&u3_new)?;

        // --- Core update: G_(1) = U1' Y Z' (Z Z')^{-1}, Z = (U3 x U2)' X.
        let z = kronecker(&u3, &u2).matmul_tn(x); // r2 r3 x T
        let zzt = z.matmul_nt(&z);
        let yzt = u1.matmul_tn(y).matmul_nt(&z);
        let g1 = solve_spd(&zzt, &yzt.transpose())?.transpose();
        g = fold(&g1, 1, (r1, r2, r3))?;

        sweeps_used = sweep;
        let obj = objective(&g, &u1, &u2, &u3)?;
        if obj > obj_prev + 1e-9 * obj_prev.abs().max(obj_scale) {
            return Err(Error::NonConvergence {
                what: "rank-constrained ALS (objective increased)",
                iterations: sweep,
            });
        }
        let done = (obj_prev - obj).abs() <= ALS_REL_TOL * obj_prev.abs().max(1e-12 * obj_scale);
        obj_prev = obj;
        if done {
            break;
        }
    }

    let tensor = tucker_reconstruct(&g, &u1, &u2, &u3)?;
    let (core, u1, u2, u3) = hosvd(&tensor, ranks)?;
    Ok(RankConstrainedFit {
        tensor,
        core,
        u1,
        u2,
        u3,
        sweeps_used,
    })
}

/// QR with the triangular factor returned, for absorbing scale into the
/// core when re-orthonormalizing an ALS factor.
fn orthonormalize_with_factor(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let q = crate::linalg::orthonormalize(m)?;
    let t = q.matmul_tn(m);
    Ok((q, t))
}

/// Spectral initialization for the VAR(ℓ) algorithm from a
/// rank-constrained fit: common-subspace extraction on the mode-1/mode-2
/// HOSVD factors, lag factor `b U3`, and the core scaled so that the
/// initial reconstruction equals the projection of the estimator onto the
/// factor spans for every `b`.
pub fn spectral_init_varl(rc: &RankConstrainedFit, d: usize, b: f64) -> Result<VarLCsParams> {
    if !(b > 0.0) {
        return Err(Error::InvalidArg("spectral_init_varl: b must be positive".into()));
    }
    let cf = extract_common(&rc.u1, &rc.u2, d)?;
    let left = cf.common.hcat(&cf.resp);
    let right = cf.common.hcat(&cf.pred);
    let core_unscaled = mode_product(
        &mode_product(
            &mode_product(&rc.tensor, &left.transpose(), 1)?,
            &right.transpose(),
            2,
        )?,
        &rc.u3.transpose(),
        3,
    )?;
    VarLCsParams::new(
        cf.common.scale(b),
        cf.resp.scale(b),
        cf.pred.scale(b),
        rc.u3.scale(b),
        core_unscaled.scale(1.0 / (b * b * b)),
        b,
    )
}

/// Data-driven lambda for the sparse initializer:
/// `2 sigma_hat sqrt(log(p) / T)` with `sigma_hat` a robust residual
/// scale (normalized median absolute residual) from a ridge pre-fit.
pub fn default_sparse_lambda(y: &Matrix, x: &Matrix) -> Result<f64> {
    let gram = GramData::new(y, x)?;
    let p = y.rows();
    let q = x.rows();
    let delta = 0.1 * gram.s_xx.trace() / q as f64;
    let mut ridge = gram.s_xx.clone();
    for i in 0..q {
        let v = ridge.get(i, i) + delta.max(1e-12);
        ridge.set(i, i, v);
    }
    let a_ridge = solve_spd(&ridge, &gram.s_yx.transpose())?.transpose();
    let resid = y.sub(&a_ridge.matmul(x));
    let mut abs: Vec<f64> = resid.data().iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = abs.len() / 2;
    let mad = if abs.len() % 2 == 1 {
        abs[mid]
    } else {
        0.5 * (abs[mid - 1] + abs[mid])
    };
    let sigma = mad / 0.6745;
    let t_len = y.cols() as f64;
    Ok(2.0 * sigma * ((p as f64).ln() / t_len).sqrt())
}

/// Sparse spectral initialization: L1-regularized least squares, spectral
/// common-subspace construction on its top-`r` singular subspaces, then
/// row hard-thresholding at the given budgets.
pub fn sparse_init_var1(
    y: &Matrix,
    x: &Matrix,
    r: usize,
    d: usize,
    lambda: f64,
    levels: SparsityLevels,
    b: f64,
) -> Result<Var1CsParams> {
    if !(b > 0.0) {
        return Err(Error::InvalidArg("sparse_init_var1: b must be positive".into()));
    }
    let a_l1 = lasso_var1(y, x, lambda, &GdConfig::default())?;
    let f = svd(&a_l1)?;
    let u = f.u.columns(0, r);
    let v = f.v.columns(0, r);
    let cf = extract_common(&u, &v, d)?;
    let left = cf.common.hcat(&cf.resp);
    let right = cf.common.hcat(&cf.pred);
    let core = left.matmul_tn(&a_l1).matmul(&right);
    let common = if d > 0 {
        hard_threshold_rows(&cf.common.scale(b), levels.s_common)?
    } else {
        cf.common.scale(b)
    };
    let (resp, pred) = if r > d {
        (
            hard_threshold_rows(&cf.resp.scale(b), levels.s_resp)?,
            hard_threshold_rows(&cf.pred.scale(b), levels.s_pred)?,
        )
    } else {
        (cf.resp.scale(b), cf.pred.scale(b))
    };
    Var1CsParams::new(common, resp, pred, core.scale(1.0 / (b * b)), b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormalize;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn random_orthonormal(p: usize, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
        orthonormalize(&randn(p, k, rng)).unwrap()
    }

    fn planted_var1(p: usize, r: usize, d: usize, rng: &mut ChaCha8Rng) -> Var1CsParams {
        let joint = random_orthonormal(p, 2 * r - d, rng);
        let o1 = random_orthonormal(r, r, rng);
        let o2 = random_orthonormal(r, r, rng);
        let svals: Vec<f64> = (0..r).map(|_| 0.8 + 0.7 * rng.random::<f64>()).collect();
        Var1CsParams::new(
            joint.columns(0, d),
            joint.columns(d, r),
            joint.columns(r, 2 * r - d),
            o1.matmul_tn(&Matrix::diag(&svals)).matmul(&o2),
            1.0,
        )
        .unwrap()
    }

    fn projector_dist(a: &Matrix, b: &Matrix) -> f64 {
        a.matmul_nt(a).sub(&b.matmul_nt(b)).frobenius_norm()
    }

    #[test]
    fn reduced_rank_full_rank_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let p = 5;
        let x = randn(p, 60, &mut rng);
        let y = randn(p, 60, &mut rng);
        let rr = reduced_rank_var1(&y, &x, p).unwrap();
        let ols = y
            .matmul_nt(&x)
            .matmul(&pinv_psd(&x.matmul_nt(&x)).unwrap());
        let err = rr.a_hat.sub(&ols).frobenius_norm() / ols.frobenius_norm();
        assert!(err < 1e-10, "full-rank deviation {err}");
    }

    #[test]
    fn reduced_rank_recovers_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let (p, r, d) = (8, 3, 1);
        let truth = planted_var1(p, r, d, &mut rng);
        let a_true = truth.reconstruct();
        let x = randn(p, 30 * p, &mut rng);
        let y = a_true.matmul(&x);
        let rr = reduced_rank_var1(&y, &x, r).unwrap();
        let err = rr.a_hat.sub(&a_true).frobenius_norm();
        assert!(err < 1e-8, "recovery error {err}");
        // Over-specified rank returns the same estimate.
        let rr5 = reduced_rank_var1(&y, &x, 5).unwrap();
        assert!(rr5.a_hat.sub(&a_true).frobenius_norm() < 1e-8);
        assert!(rr5.svd.s[3] < 1e-8 * rr5.svd.s[0]);
    }

    #[test]
    fn reduced_rank_is_whitened_truncation() {
        // With X X' proportional to I, the rank-r least-squares minimizer
        // is the SVD truncation of the OLS fit.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let p = 4;
        let t_len = 300;
        let raw = randn(t_len, p, &mut rng);
        let x = orthonormalize(&raw).unwrap().transpose().scale((t_len as f64).sqrt());
        let y = randn(p, t_len, &mut rng);
        let ols = y
            .matmul_nt(&x)
            .matmul(&pinv_psd(&x.matmul_nt(&x)).unwrap());
        let f = svd(&ols).unwrap();
        for r in 1..=3usize {
            let mut trunc = Matrix::zeros(p, p);
            for k in 0..r {
                let uk = f.u.column(k);
                let vk = f.v.column(k);
                for i in 0..p {
                    for j in 0..p {
                        let v = trunc.get(i, j) + f.s[k] * uk[i] * vk[j];
                        trunc.set(i, j, v);
                    }
                }
            }
            let rr = reduced_rank_var1(&y, &x, r).unwrap();
            let err = rr.a_hat.sub(&trunc).frobenius_norm();
            assert!(err < 1e-8, "rank {r} truncation mismatch {err}");
        }
    }

    #[test]
    fn degenerate_design_is_reported() {
        let y = Matrix::zeros(3, 10);
        let x = Matrix::zeros(3, 10);
        assert!(matches!(
            reduced_rank_var1(&y, &x, 2),
            Err(Error::DegenerateDesign)
        ));
    }

    #[test]
    fn extract_common_planted_subspaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let (p, r, d) = (9, 3, 1);
        let joint = random_orthonormal(p, 2 * r - d, &mut rng);
        let c = joint.columns(0, d);
        let r_m = joint.columns(d, r);
        let p_m = joint.columns(r, 2 * r - d);
        // U = [C R] O1, V = [C P] O2 for random rotations.
        let u = c.hcat(&r_m).matmul(&random_orthonormal(r, r, &mut rng));
        let v = c.hcat(&p_m).matmul(&random_orthonormal(r, r, &mut rng));
        let cf = extract_common(&u, &v, d).unwrap();
        assert!(projector_dist(&cf.common, &c) < 1e-8);
        assert!(projector_dist(&cf.resp, &r_m) < 1e-8);
        assert!(projector_dist(&cf.pred, &p_m) < 1e-8);
        assert!(!cf.weak_common);
        // Construction guarantees C perpendicular to the specific blocks.
        assert!(cf.common.matmul_tn(&cf.resp).frobenius_norm() < 1e-8);
        assert!(cf.common.matmul_tn(&cf.pred).frobenius_norm() < 1e-8);
    }

    #[test]
    fn extract_common_identical_subspaces() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let u = random_orthonormal(7, 3, &mut rng);
        let cf = extract_common(&u, &u, 3).unwrap();
        assert_eq!(cf.resp.cols(), 0);
        assert_eq!(cf.pred.cols(), 0);
        assert!(projector_dist(&cf.common, &u) < 1e-8);
    }

    #[test]
    fn extract_common_d_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let p = 8;
        let u = random_orthonormal(p, 2, &mut rng);
        let v = random_orthonormal(p, 2, &mut rng);
        let cf = extract_common(&u, &v, 0).unwrap();
        assert_eq!(cf.common.cols(), 0);
        assert_eq!(cf.resp.cols(), 2);
        // For generic subspaces (no common direction), the specific blocks
        // span the originals.
        assert!(projector_dist(&cf.resp, &u) < 1e-6);
        assert!(projector_dist(&cf.pred, &v) < 1e-6);
    }

    #[test]
    fn spectral_init_var1_definition_and_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let (p, r, d) = (10, 3, 1);
        let truth = planted_var1(p, r, d, &mut rng);
        let a_true = truth.reconstruct();
        let x = randn(p, 40 * p, &mut rng);
        let y = a_true.matmul(&x);
        let rr = reduced_rank_var1(&y, &x, r).unwrap();
        for b in [1.0, 2.0] {
            let init = spectral_init_var1(&rr, d, b).unwrap();
            // Reconstruction is b-invariant and equals [C R] D [C P]' built
            // from the unscaled extraction.
            let err = init.reconstruct().sub(&a_true).frobenius_norm() / a_true.frobenius_norm();
            assert!(err < 1e-6, "b = {b}: init error {err}");
            // Scale contract: factor Gram matrices are b^2 I.
            let gram_dev = init
                .left_factor()
                .matmul_tn(&init.left_factor())
                .sub(&Matrix::identity(r).scale(b * b))
                .frobenius_norm();
            assert!(gram_dev < 1e-8);
        }
    }

    #[test]
    fn spectral_init_var1_all_d_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let (p, r) = (8, 3);
        let x = randn(p, 200, &mut rng);
        let a = randn(p, p, &mut rng).scale(0.3);
        let y = a.matmul(&x).add(&randn(p, 200, &mut rng).scale(0.5));
        let rr = reduced_rank_var1(&y, &x, r).unwrap();
        for d in 0..=r {
            let init = spectral_init_var1(&rr, d, 1.0).unwrap();
            assert_eq!(init.common_dim(), d);
            assert_eq!(init.rank(), r);
            assert!(init.reconstruct().is_finite());
        }
    }

    fn planted_varl(
        p: usize,
        lag: usize,
        ranks: (usize, usize, usize),
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> VarLCsParams {
        let (r1, r2, r3) = ranks;
        let joint = random_orthonormal(p, r1 + r2 - d, rng);
        // A random dense core has full multilinear ranks almost surely;
        // a super-diagonal one does not when the ranks differ.
        let g = Tensor3::from_fn(r1, r2, r3, |_, _, _| {
            0.5 * rng.sample::<f64, _>(StandardNormal)
        });
        VarLCsParams::new(
            joint.columns(0, d),
            joint.columns(d, r1),
            joint.columns(r1, r1 + r2 - d),
            random_orthonormal(lag, r3, rng),
            g,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn rank_constrained_full_ranks_equals_ls() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let (p, lag) = (4, 2);
        let t_len = 100;
        let x = randn(p * lag, t_len, &mut rng);
        let y = randn(p, t_len, &mut rng);
        let fit = rank_constrained_varl_design(&y, &x, lag, (p, p, lag)).unwrap();
        let gram = GramData::new(&y, &x).unwrap();
        let a_ls = gram.s_yx.matmul(&pinv_psd(&gram.s_xx).unwrap());
        let err = unfold(&fit.tensor, 1).sub(&a_ls).frobenius_norm() / a_ls.frobenius_norm();
        assert!(err < 1e-8, "full-rank ALS deviation {err}");
    }

    #[test]
    fn rank_constrained_recovers_planted_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let (p, lag) = (7, 3);
        let ranks = (2, 2, 2);
        let truth = planted_varl(p, lag, ranks, 1, &mut rng);
        let t_true = truth.reconstruct();
        let t_len = 40 * p;
        let x = randn(p * lag, t_len, &mut rng);
        let y = unfold(&t_true, 1).matmul(&x);
        let fit = rank_constrained_varl_design(&y, &x, lag, ranks).unwrap();
        let err = fit.tensor.sub(&t_true).frobenius_norm() / t_true.frobenius_norm();
        assert!(err < 1e-6, "planted recovery error {err}");
    }

    #[test]
    fn rank_constrained_improves_on_its_hosvd_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (p, lag) = (6, 2);
        let ranks = (2, 2, 2);
        let t_len = 120;
        let x = randn(p * lag, t_len, &mut rng);
        let truth = planted_varl(p, lag, ranks, 1, &mut rng);
        let y = unfold(&truth.reconstruct(), 1)
            .matmul(&x)
            .add(&randn(p, t_len, &mut rng).scale(0.5));
        let gram = GramData::new(&y, &x).unwrap();
        let a_ls = gram.s_yx.matmul(&pinv_psd(&gram.s_xx).unwrap());
        let ls_tensor = fold(&a_ls, 1, (p, p, lag)).unwrap();
        let (g0, w1, w2, w3) = hosvd(&ls_tensor, ranks).unwrap();
        let hosvd_obj = gram.loss(&unfold(
            &tucker_reconstruct(&g0, &w1, &w2, &w3).unwrap(),
            1,
        ));
        let fit = rank_constrained_varl_design(&y, &x, lag, ranks).unwrap();
        let als_obj = gram.loss(&unfold(&fit.tensor, 1));
        assert!(
            als_obj <= hosvd_obj + 1e-12,
            "ALS {als_obj} worse than HOSVD start {hosvd_obj}"
        );
    }

    #[test]
    fn spectral_init_varl_reduces_to_var1() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let (p, r, d) = (8, 3, 1);
        let truth = planted_var1(p, r, d, &mut rng);
        let a_true = truth.reconstruct();
        let t_len = 500;
        let x = randn(p, t_len, &mut rng);
        let y = a_true.matmul(&x).add(&randn(p, t_len, &mut rng).scale(0.01));
        let rr = reduced_rank_var1(&y, &x, r).unwrap();
        let init1 = spectral_init_var1(&rr, d, 1.0).unwrap();
        let rc = rank_constrained_varl_design(&y, &x, 1, (r, r, 1)).unwrap();
        let init_l = spectral_init_varl(&rc, d, 1.0).unwrap();
        // Gauge-invariant comparison: projectors of each factor block.
        assert!(projector_dist(&init_l.common, &init1.common) < 1e-6);
        assert!(projector_dist(&init_l.resp, &init1.resp) < 1e-6);
        assert!(projector_dist(&init_l.pred, &init1.pred) < 1e-6);
    }

    #[test]
    fn spectral_init_varl_recovery_and_core_norm_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let (p, lag) = (8, 3);
        let ranks = (3, 3, 2);
        let d = 1;
        let truth = planted_varl(p, lag, ranks, d, &mut rng);
        let t_true = truth.reconstruct();
        let t_len = 40 * p;
        let x = randn(p * lag, t_len, &mut rng);
        let y = unfold(&t_true, 1).matmul(&x);
        let rc = rank_constrained_varl_design(&y, &x, lag, ranks).unwrap();
        for b in [1.0, 1.7] {
            let init = spectral_init_varl(&rc, d, b).unwrap();
            let err = init.reconstruct().sub(&t_true).frobenius_norm() / t_true.frobenius_norm();
            assert!(err < 1e-6, "b = {b}: init error {err}");
            // Norm identity: ||G0|| = b^{-3} ||projection of the estimator
            // onto the factor spans||.
            let left = init.common.hcat(&init.resp).scale(1.0 / b);
            let right = init.common.hcat(&init.pred).scale(1.0 / b);
            let lagf = init.lag_factor.scale(1.0 / b);
            let proj = tucker_reconstruct(
                &mode_product(
                    &mode_product(
                        &mode_product(&rc.tensor, &left.transpose(), 1).unwrap(),
                        &right.transpose(),
                        2,
                    )
                    .unwrap(),
                    &lagf.transpose(),
                    3,
                )
                .unwrap(),
                &left,
                &right,
                &lagf,
            )
            .unwrap();
            let expect = proj.frobenius_norm() / (b * b * b);
            assert!(
                (init.core.frobenius_norm() - expect).abs() < 1e-8 * expect.max(1.0),
                "core norm identity at b = {b}"
            );
        }
    }

    #[test]
    fn sparse_init_unthresholded_matches_spectral() {
        let mut rng = ChaCha8Rng::seed_from_u64(64);
        let (p, r, d) = (8, 2, 1);
        let truth = planted_var1(p, r, d, &mut rng);
        let t_len = 400;
        let x = randn(p, t_len, &mut rng);
        let y = truth.reconstruct().matmul(&x);
        let full = SparsityLevels {
            s_common: p,
            s_resp: p,
            s_pred: p,
        };
        let init = sparse_init_var1(&y, &x, r, d, 0.0, full, 1.0).unwrap();
        let rr = reduced_rank_var1(&y, &x, r).unwrap();
        let spectral = spectral_init_var1(&rr, d, 1.0).unwrap();
        assert!(projector_dist(&init.common, &spectral.common) < 1e-6);
        assert!(projector_dist(&init.resp, &spectral.resp) < 1e-6);
        assert!(projector_dist(&init.pred, &spectral.pred) < 1e-6);
    }

    #[test]
    fn sparse_init_respects_budgets() {
        let mut rng = ChaCha8Rng::seed_from_u64(65);
        let (p, r, d) = (12, 3, 1);
        let truth = planted_var1(p, r, d, &mut rng);
        let x = randn(p, 100, &mut rng);
        let y = truth.reconstruct().matmul(&x).add(&randn(p, 100, &mut rng).scale(0.2));
        let levels = SparsityLevels {
            s_common: 3,
            s_resp: 4,
            s_pred: 5,
        };
        let lambda = default_sparse_lambda(&y, &x).unwrap();
        assert!(lambda > 0.0);
        let init = sparse_init_var1(&y, &x, r, d, lambda, levels, 1.0).unwrap();
        let nz = |m: &Matrix| {
            (0..m.rows())
                .filter(|&i| m.row(i).iter().any(|&v| v != 0.0))
                .count()
        };
        assert!(nz(&init.common) <= 3);
        assert!(nz(&init.resp) <= 4);
        assert!(nz(&init.pred) <= 5);
    }
}
