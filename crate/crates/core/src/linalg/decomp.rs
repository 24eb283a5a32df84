//! Matrix factorizations: one-sided Jacobi SVD, cyclic Jacobi symmetric
//! eigendecomposition, SVD-based pseudo-inverse, and a norm-squaring
//! spectral-radius estimator.
//!
//! All factorizations apply a deterministic sign convention (the entry of
//! largest magnitude in each left vector is made positive) so results are
//! reproducible across runs and platforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAX_JACOBI_SWEEPS: usize = 64;

/// Thin singular value decomposition `m = u * diag(s) * v'`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Svd {
    /// Left singular vectors, orthonormal columns.
    pub u: Matrix,
    /// Singular values, non-negative and non-increasing.
    pub s: Vec<f64>,
    /// Right singular vectors, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let mut us = self.u.clone();
        for j in 0..k {
            for i in 0..us.rows() {
                let v = us.get(i, j) * self.s[j];
                us.set(i, j, v);
            }
        }
        us.matmul_nt(&self.v)
    }

    /// Rank at the relative cutoff `rel_tol * s[0]`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let s1 = self.s.first().copied().unwrap_or(0.0);
        self.s.iter().filter(|&&x| x > rel_tol * s1).count()
    }
}

/// Thin SVD via one-sided Jacobi rotations.
///
/// The input must be finite. Fails with the sweep count if the rotation
/// sweeps do not converge.
pub fn svd(m: &Matrix) -> Result<Svd> {
    if !m.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        });
    }
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(Svd {
            u: Matrix::zeros(rows, 0),
            s: vec![],
            v: Matrix::zeros(0, 0),
        });
    }

    // Columns of `a` are orthogonalized in place; `v` accumulates the
    // right-hand rotations.
    let mut a = m.transpose(); // row i of `a` is column i of `m`
    let mut v = Matrix::identity(cols);
    let tol = 1e-14;
    // Columns this far below the matrix scale are numerically zero;
    // rotating against them cycles forever on rank-deficient inputs.
    let fro = m.frobenius_norm();
    let dead = 1e-15 * fro;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_JACOBI_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                {
                    let (head, tail) = a.data().split_at(q * rows);
                    let ap = &head[p * rows..p * rows + rows];
                    let aq = &tail[..rows];
                    for (x, y) in ap.iter().zip(aq.iter()) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                }
                let scale = (alpha * beta).sqrt();
                if scale == 0.0
                    || gamma.abs() <= tol * scale
                    || alpha.min(beta).sqrt() <= dead
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut a, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "one-sided Jacobi SVD",
            iterations: sweeps,
        });
    }

    // Singular values are the column norms of the rotated matrix.
    let mut sv: Vec<(f64, usize)> = (0..cols)
        .map(|j| {
            let row = &a.data()[j * rows..(j + 1) * rows];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            (norm, j)
        })
        .collect();
    sv.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

    let mut u = Matrix::zeros(rows, cols);
    let mut vs = Matrix::zeros(cols, cols);
    let mut s = Vec::with_capacity(cols);
    let zero_tol = sv[0].0 * 1e-300;
    for (out_j, &(sigma, src)) in sv.iter().enumerate() {
        s.push(sigma);
        if sigma > zero_tol && sigma > 0.0 {
            for i in 0..rows {
                u.set(i, out_j, a.get(src, i) / sigma);
            }
        }
        for i in 0..cols {
            vs.set(i, out_j, v.get(src, i));
        }
    }
    // Columns with numerically zero singular values are completed to an
    // orthonormal basis so that u'u = I still holds.
    complete_zero_columns(&mut u, &s, zero_tol);
    apply_sign_convention(&mut u, &mut vs);
    Ok(Svd { u, s, v: vs })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    debug_assert!(p < q);
    // Safe split: rows p and q are disjoint slices.
    let prow_start = p * cols;
    let qrow_start = q * cols;
    let data = unsafe {
        std::slice::from_raw_parts_mut(m.row_mut(0).as_mut_ptr(), m.rows() * cols)
    };
    for k in 0..cols {
        let x = data[prow_start + k];
        let y = data[qrow_start + k];
        data[prow_start + k] = c * x - s * y;
        data[qrow_start + k] = s * x + c * y;
    }
}

fn complete_zero_columns(u: &mut Matrix, s: &[f64], zero_tol: f64) {
    let (rows, cols) = u.shape();
    for j in 0..cols {
        if s[j] > zero_tol && s[j] > 0.0 {
            continue;
        }
        // Gram-Schmidt a canonical basis vector against the columns built
        // so far; deterministic seed order.
        'seed: for seed in 0..rows {
            let mut w = vec![0.0; rows];
            w[seed] = 1.0;
            for jj in 0..cols {
                if jj == j || (s[jj] <= zero_tol && jj > j) {
                    continue;
                }
                let mut dot = 0.0;
                for i in 0..rows {
                    dot += u.get(i, jj) * w[i];
                }
                for i in 0..rows {
                    w[i] -= dot * u.get(i, jj);
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for i in 0..rows {
                    u.set(i, j, w[i] / norm);
                }
                break 'seed;
            }
        }
    }
}

fn apply_sign_convention(u: &mut Matrix, v: &mut Matrix) {
    let (rows, cols) = u.shape();
    for j in 0..cols {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..rows {
            let a = u.get(i, j).abs();
            if a > best_abs + 1e-300 && a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u.get(best, j) < 0.0 {
            for i in 0..rows {
                let x = -u.get(i, j);
                u.set(i, j, x);
            }
            if j < v.cols() {
                for i in 0..v.rows() {
                    let x = -v.get(i, j);
                    v.set(i, j, x);
                }
            }
        }
    }
}

/// Full eigendecomposition of a symmetric matrix via cyclic Jacobi.
///
/// The input is symmetrized as `(m + m') / 2` first. Returns eigenvalues in
/// non-increasing (algebraic) order with matching orthonormal eigenvectors.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if m.rows() != m.cols() {
        return Err(Error::ShapeMismatch {
            op: "symmetric_eigen",
            expected: "square matrix".into(),
            got: format!("{:?}", m.shape()),
        });
    }
    let n = m.rows();
    if n == 0 {
        return Ok((vec![], Matrix::zeros(0, 0)));
    }
    let mut a = Matrix::from_fn(n, n, |i, j| 0.5 * (m.get(i, j) + m.get(j, i)));
    let mut v = Matrix::identity(n);
    let scale = a.max_abs().max(1e-300);
    let tol = 1e-15 * scale;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_JACOBI_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= tol {
                    continue;
                }
                rotated = true;
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (1.0 + theta * theta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // A <- J' A J with J the (p,q) rotation.
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged && n > 1 {
        return Err(Error::NonConvergence {
            what: "Jacobi symmetric eigendecomposition",
            iterations: sweeps,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let evals: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    order.sort_by(|&x, &y| evals[y].partial_cmp(&evals[x]).unwrap().then(x.cmp(&y)));
    let sorted_vals: Vec<f64> = order.iter().map(|&i| evals[i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (out_j, &src) in order.iter().enumerate() {
        for i in 0..n {
            vecs.set(i, out_j, v.get(i, src));
        }
    }
    let mut dummy = Matrix::zeros(0, 0);
    apply_sign_convention(&mut vecs, &mut dummy);
    Ok((sorted_vals, vecs))
}

/// Orthonormal eigenvectors for the `k` algebraically largest eigenvalues
/// of a (nearly) symmetric matrix.
pub fn top_k_eigvecs_sym(m: &Matrix, k: usize) -> Result<Matrix> {
    let n = m.rows();
    if k > n {
        return Err(Error::InvalidArg(format!(
            "top_k_eigvecs_sym: k = {k} exceeds dimension {n}"
        )));
    }
    if k == 0 {
        return Ok(Matrix::zeros(n, 0));
    }
    let (_, vecs) = symmetric_eigen(m)?;
    Ok(vecs.columns(0, k))
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semi-definite
/// matrix, with eigenvalues below `1e-10 * lambda_max` treated as zero.
pub fn pinv_psd(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = symmetric_eigen(m)?;
    let lmax = vals.first().copied().unwrap_or(0.0);
    if lmax <= 0.0 {
        return Err(Error::DegenerateDesign);
    }
    let cutoff = 1e-10 * lmax;
    let n = m.rows();
    let mut scaled = vecs.clone();
    for j in 0..n {
        let inv = if vals[j] > cutoff { 1.0 / vals[j] } else { 0.0 };
        for i in 0..n {
            let v = scaled.get(i, j) * inv;
            scaled.set(i, j, v);
        }
    }
    Ok(scaled.matmul_nt(&vecs))
}

/// Solves `A X = B` for symmetric positive semi-definite `A` by Cholesky,
/// escalating a diagonal jitter on failure and falling back to the
/// pseudo-inverse for genuinely singular systems.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() || a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "solve_spd",
            expected: "square A with matching rhs".into(),
            got: format!("A {:?}, B {:?}", a.shape(), b.shape()),
        });
    }
    let n = a.rows();
    if n == 0 {
        return Ok(Matrix::zeros(0, b.cols()));
    }
    let mean_diag = (0..n).map(|i| a.get(i, i).abs()).sum::<f64>() / n as f64;
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut m = a.clone();
        if jitter > 0.0 {
            for i in 0..n {
                let v = m.get(i, i) + jitter * mean_diag.max(1e-300);
                m.set(i, i, v);
            }
        }
        if let Some(l) = cholesky(&m) {
            return Ok(cholesky_solve(&l, b));
        }
    }
    Ok(pinv_psd(a)?.matmul(b))
}

/// Lower-triangular Cholesky factor, or `None` if not positive definite.
fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l.set(i, j, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows();
    let k = b.cols();
    let mut x = b.clone();
    // Forward substitution L z = b.
    for col in 0..k {
        for i in 0..n {
            let mut v = x.get(i, col);
            for j in 0..i {
                v -= l.get(i, j) * x.get(j, col);
            }
            x.set(i, col, v / l.get(i, i));
        }
        // Back substitution L' y = z.
        for i in (0..n).rev() {
            let mut v = x.get(i, col);
            for j in i + 1..n {
                v -= l.get(j, i) * x.get(j, col);
            }
            x.set(i, col, v / l.get(i, i));
        }
    }
    x
}

/// Spectral radius of a square matrix, accurate to about 1e-6 relative.
///
/// Uses repeated squaring with norm tracking: `||A^(2^k)||_F^(1/2^k)`
/// converges to the spectral radius from above.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::ShapeMismatch {
            op: "spectral_radius",
            expected: "square matrix".into(),
            got: format!("{:?}", a.shape()),
        });
    }
    if a.rows() == 0 {
        return Ok(0.0);
    }
    let norm0 = a.frobenius_norm();
    if norm0 == 0.0 {
        return Ok(0.0);
    }
    let mut b = a.scale(1.0 / norm0);
    let mut log_est = norm0.ln();
    let mut prev = f64::INFINITY;
    for k in 1..=48usize {
        b = b.matmul(&b);
        let t = b.frobenius_norm();
        if t == 0.0 {
            return Ok(0.0);
        }
        log_est += t.ln() / (1u64 << k) as f64;
        b = b.scale(1.0 / t);
        if (log_est - prev).abs() <= 1e-9 {
            return Ok(log_est.exp());
        }
        prev = log_est;
    }
    if (log_est - prev).abs() <= 1e-6 {
        Ok(log_est.exp())
    } else {
        Err(Error::NonConvergence {
            what: "spectral radius norm-squaring",
            iterations: 48,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn svd_identity() {
        let f = svd(&Matrix::identity(3)).unwrap();
        for s in &f.s {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(f.u.sub(&Matrix::identity(3)).frobenius_norm() < 1e-12);
        assert!(f.v.sub(&Matrix::identity(3)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn svd_diagonal() {
        let f = svd(&Matrix::diag(&[2.0, 1.0])).unwrap();
        assert!((f.s[0] - 2.0).abs() < 1e-12);
        assert!((f.s[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = randn_matrix(5, 4, &mut rng);
        let f = svd(&m).unwrap();
        let err = f.reconstruct().sub(&m).frobenius_norm() / m.frobenius_norm();
        assert!(err < 1e-10, "reconstruction error {err}");
        // Orthonormality of both factors.
        let ue = f.u.matmul_tn(&f.u).sub(&Matrix::identity(4)).frobenius_norm();
        let ve = f.v.matmul_tn(&f.v).sub(&Matrix::identity(4)).frobenius_norm();
        assert!(ue < 1e-10 && ve < 1e-10);
    }

    #[test]
    fn svd_wide_and_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tall = randn_matrix(6, 2, &mut rng);
        let wide = tall.transpose();
        let f = svd(&wide).unwrap();
        assert_eq!(f.u.shape(), (2, 2));
        assert_eq!(f.v.shape(), (6, 2));
        let err = f.reconstruct().sub(&wide).frobenius_norm() / wide.frobenius_norm();
        assert!(err < 1e-10);

        // Rank-1 matrix: second singular value vanishes but U stays orthonormal.
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        let f = svd(&a).unwrap();
        assert!(f.s[1] < 1e-12 * f.s[0]);
        let ue = f.u.matmul_tn(&f.u).sub(&Matrix::identity(2)).frobenius_norm();
        assert!(ue < 1e-10);
    }

    #[test]
    fn svd_sign_convention_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = randn_matrix(6, 3, &mut rng);
        let f1 = svd(&m).unwrap();
        let f2 = svd(&m.scale(1.0)).unwrap();
        assert_eq!(f1.u.data(), f2.u.data());
        // Largest-magnitude entry of each left vector is positive.
        for j in 0..3 {
            let col = f1.u.column(j);
            let best = col
                .iter()
                .cloned()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(best > 0.0);
        }
    }

    #[test]
    fn eig_diagonal_and_full_basis() {
        let m = Matrix::diag(&[3.0, 2.0, 1.0]);
        let top = top_k_eigvecs_sym(&m, 2).unwrap();
        assert!((top.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!((top.get(1, 1).abs() - 1.0).abs() < 1e-12);
        assert!(top.get(2, 0).abs() < 1e-12);

        let full = top_k_eigvecs_sym(&m, 3).unwrap();
        let g = full.matmul_tn(&full);
        assert!(g.sub(&Matrix::identity(3)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn eig_projector_recovery() {
        // 2 C C' for a random orthonormal C: top-2 eigenvectors span C.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = randn_matrix(6, 2, &mut rng);
        let c = crate::linalg::orthonormalize(&g).unwrap();
        let m = c.matmul_nt(&c).scale(2.0);
        let top = top_k_eigvecs_sym(&m, 2).unwrap();
        let diff = top.matmul_nt(&top).sub(&c.matmul_nt(&c)).frobenius_norm();
        assert!(diff < 1e-8, "projector mismatch {diff}");
    }

    #[test]
    fn eig_k_out_of_range() {
        assert!(top_k_eigvecs_sym(&Matrix::identity(2), 3).is_err());
    }

    #[test]
    fn eig_sorts_algebraically() {
        let m = Matrix::diag(&[-5.0, 0.5, 2.0]);
        let (vals, _) = symmetric_eigen(&m).unwrap();
        assert!((vals[0] - 2.0).abs() < 1e-12);
        assert!((vals[2] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn pinv_psd_inverts_well_conditioned() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = randn_matrix(5, 5, &mut rng);
        let m = g.matmul_nt(&g).add(&Matrix::identity(5));
        let inv = pinv_psd(&m).unwrap();
        let err = m.matmul(&inv).sub(&Matrix::identity(5)).frobenius_norm();
        assert!(err < 1e-9, "pinv residual {err}");
    }

    #[test]
    fn spectral_radius_cases() {
        let m = Matrix::diag(&[0.5, -0.9]);
        assert!((spectral_radius(&m).unwrap() - 0.9).abs() < 1e-6);

        let th = 0.83f64;
        let rot = Matrix::from_rows(&[&[th.cos(), -th.sin()], &[th.sin(), th.cos()]]).scale(0.7);
        assert!((spectral_radius(&rot).unwrap() - 0.7).abs() < 1e-6);

        assert_eq!(spectral_radius(&Matrix::zeros(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_radius_scales_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = randn_matrix(6, 6, &mut rng);
        let r1 = spectral_radius(&m).unwrap();
        let r2 = spectral_radius(&m.scale(-2.5)).unwrap();
        assert!((r2 - 2.5 * r1).abs() < 1e-6 * r2.max(1.0));
    }
}
