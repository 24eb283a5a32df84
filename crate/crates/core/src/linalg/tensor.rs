//! Dense order-3 tensors with mode unfoldings, mode products, and HOSVD.
//!
//! Unfolding follows the Kolda-Bader convention: the mode-n unfolding has
//! the n-mode fibers as columns, with lower-numbered remaining modes
//! varying fastest in the column index. Concretely, for dims
//! `(p1, p2, p3)`:
//!
//! - mode 1: `p1 x (p2 p3)`, column `i2 + p2 * i3`
//! - mode 2: `p2 x (p1 p3)`, column `i1 + p1 * i3`
//! - mode 3: `p3 x (p1 p2)`, column `i1 + p1 * i2`
//!
//! The backing storage is exactly the row-major mode-1 unfolding, so one
//! convention holds crate-wide.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(p1: usize, p2: usize, p3: usize) -> Self {
        Self {
            dims: (p1, p2, p3),
            data: vec![0.0; p1 * p2 * p3],
        }
    }

    pub fn from_fn(
        p1: usize,
        p2: usize,
        p3: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut t = Self::zeros(p1, p2, p3);
        for i1 in 0..p1 {
            for i2 in 0..p2 {
                for i3 in 0..p3 {
                    t.set(i1, i2, i3, f(i1, i2, i3));
                }
            }
        }
        t
    }

    /// Builds the tensor whose frontal slices (fixed third index) are the
    /// given `p1 x p2` matrices.
    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidArg("from_slices: empty slice list".into()));
        }
        let (p1, p2) = slices[0].shape();
        if !slices.iter().all(|s| s.shape() == (p1, p2)) {
            return Err(Error::ShapeMismatch {
                op: "Tensor3::from_slices",
                expected: format!("{p1}x{p2} slices"),
                got: "mixed shapes".into(),
            });
        }
        let mut t = Self::zeros(p1, p2, slices.len());
        for (k, s) in slices.iter().enumerate() {
            for i in 0..p1 {
                for j in 0..p2 {
                    t.set(i, j, k, s.get(i, j));
                }
            }
        }
        Ok(t)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    #[inline]
    fn offset(&self, i1: usize, i2: usize, i3: usize) -> usize {
        let (p1, p2, p3) = self.dims;
        debug_assert!(i1 < p1 && i2 < p2 && i3 < p3);
        i1 * (p2 * p3) + i2 + p2 * i3
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        self.data[self.offset(i1, i2, i3)]
    }

    #[inline]
    pub fn set(&mut self, i1: usize, i2: usize, i3: usize, v: f64) {
        let o = self.offset(i1, i2, i3);
        self.data[o] = v;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Tensor3) -> Tensor3 {
        assert_eq!(self.dims, other.dims, "tensor add shape mismatch");
        Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Tensor3) -> Tensor3 {
        assert_eq!(self.dims, other.dims, "tensor sub shape mismatch");
        Tensor3 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    /// Frontal slices `A_1 .. A_l` (third index fixed).
    pub fn frontal_slices(&self) -> Vec<Matrix> {
        let (p1, p2, p3) = self.dims;
        (0..p3)
            .map(|k| Matrix::from_fn(p1, p2, |i, j| self.get(i, j, k)))
            .collect()
    }
}

/// Mode-n matricization.
pub fn unfold(t: &Tensor3, mode: usize) -> Matrix {
    let (p1, p2, p3) = t.dims();
    match mode {
        1 => {
            // Storage is the row-major mode-1 unfolding already.
            Matrix::from_raw(p1, p2 * p3, t.data.clone())
        }
        2 => Matrix::from_fn(p2, p1 * p3, |i2, j| {
            let i1 = j % p1;
            let i3 = j / p1;
            t.get(i1, i2, i3)
        }),
        3 => Matrix::from_fn(p3, p1 * p2, |i3, j| {
            let i1 = j % p1;
            let i2 = j / p1;
            t.get(i1, i2, i3)
        }),
        _ => panic!("unfold: mode must be 1, 2, or 3, got {mode}"),
    }
}

/// Inverse of [`unfold`] for the given target dims.
pub fn fold(m: &Matrix, mode: usize, dims: (usize, usize, usize)) -> Result<Tensor3> {
    let (p1, p2, p3) = dims;
    let expected = match mode {
        1 => (p1, p2 * p3),
        2 => (p2, p1 * p3),
        3 => (p3, p1 * p2),
        _ => return Err(Error::InvalidArg(format!("fold: invalid mode {mode}"))),
    };
    if m.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "fold",
            expected: format!("{:?}", expected),
            got: format!("{:?}", m.shape()),
        });
    }
    let t = match mode {
        1 => Tensor3 {
            dims,
            data: m.data().to_vec(),
        },
        2 => Tensor3::from_fn(p1, p2, p3, |i1, i2, i3| m.get(i2, i1 + p1 * i3)),
        3 => Tensor3::from_fn(p1, p2, p3, |i1, i2, i3| m.get(i3, i1 + p1 * i2)),
        _ => unreachable!(),
    };
    Ok(t)
}

/// Mode-n product `(t x_n m)(.., j_n, ..) = sum_i t(.., i, ..) m(j_n, i)`,
/// computed directly from the definition.
pub fn mode_product(t: &Tensor3, m: &Matrix, mode: usize) -> Result<Tensor3> {
    let (p1, p2, p3) = t.dims();
    let along = match mode {
        1 => p1,
        2 => p2,
        3 => p3,
        _ => return Err(Error::InvalidArg(format!("mode_product: invalid mode {mode}"))),
    };
    if m.cols() != along {
        return Err(Error::ShapeMismatch {
            op: "mode_product",
            expected: format!("matrix with {along} columns"),
            got: format!("{:?}", m.shape()),
        });
    }
    let q = m.rows();
    let out = match mode {
        1 => {
            let mut out = Tensor3::zeros(q, p2, p3);
            for j in 0..q {
                for i2 in 0..p2 {
                    for i3 in 0..p3 {
                        let mut acc = 0.0;
                        for i1 in 0..p1 {
                            acc += t.get(i1, i2, i3) * m.get(j, i1);
                        }
                        out.set(j, i2, i3, acc);
                    }
                }
            }
            out
        }
        2 => {
            let mut out = Tensor3::zeros(p1, q, p3);
            for i1 in 0..p1 {
                for j in 0..q {
                    for i3 in 0..p3 {
                        let mut acc = 0.0;
                        for i2 in 0..p2 {
                            acc += t.get(i1, i2, i3) * m.get(j, i2);
                        }
                        out.set(i1, j, i3, acc);
                    }
                }
            }
            out
        }
        3 => {
            let mut out = Tensor3::zeros(p1, p2, q);
            for i1 in 0..p1 {
                for i2 in 0..p2 {
                    for j in 0..q {
                        let mut acc = 0.0;
                        for i3 in 0..p3 {
                            acc += t.get(i1, i2, i3) * m.get(j, i3);
                        }
                        out.set(i1, i2, j, acc);
                    }
                }
            }
            out
        }
        _ => unreachable!(),
    };
    Ok(out)
}

/// Higher-order SVD truncated to the given per-mode ranks.
///
/// Returns the core `t x1 u1' x2 u2' x3 u3'` together with the factors,
/// where `u_i` holds the top `r_i` left singular vectors of the mode-i
/// unfolding.
pub fn hosvd(
    t: &Tensor3,
    ranks: (usize, usize, usize),
) -> Result<(Tensor3, Matrix, Matrix, Matrix)> {
    let (p1, p2, p3) = t.dims();
    let (r1, r2, r3) = ranks;
    if r1 > p1 || r2 > p2 || r3 > p3 {
        return Err(Error::InvalidArg(format!(
            "hosvd: ranks {ranks:?} exceed dims {:?}",
            t.dims()
        )));
    }
    let u1 = svd(&unfold(t, 1))?.u.columns(0, r1);
    let u2 = svd(&unfold(t, 2))?.u.columns(0, r2);
    let u3 = svd(&unfold(t, 3))?.u.columns(0, r3);
    let core = mode_product(
        &mode_product(&mode_product(t, &u1.transpose(), 1)?, &u2.transpose(), 2)?,
        &u3.transpose(),
        3,
    )?;
    Ok((core, u1, u2, u3))
}

/// Tucker reconstruction `core x1 u1 x2 u2 x3 u3`.
pub fn tucker_reconstruct(
    core: &Tensor3,
    u1: &Matrix,
    u2: &Matrix,
    u3: &Matrix,
) -> Result<Tensor3> {
    mode_product(&mode_product(&mode_product(core, u1, 1)?, u2, 2)?, u3, 3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormalize;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn counting_tensor() -> Tensor3 {
        // Entries 1..8 with t(i,j,k) = 1 + i + 2j + 4k.
        Tensor3::from_fn(2, 2, 2, |i, j, k| (1 + i + 2 * j + 4 * k) as f64)
    }

    #[test]
    fn unfold_matches_definition_elementwise() {
        let t = counting_tensor();
        let (p1, p2, p3) = t.dims();
        let m1 = unfold(&t, 1);
        let m2 = unfold(&t, 2);
        let m3 = unfold(&t, 3);
        for i1 in 0..p1 {
            for i2 in 0..p2 {
                for i3 in 0..p3 {
                    let v = t.get(i1, i2, i3);
                    assert_eq!(m1.get(i1, i2 + p2 * i3), v);
                    assert_eq!(m2.get(i2, i1 + p1 * i3), v);
                    assert_eq!(m3.get(i3, i1 + p1 * i2), v);
                }
            }
        }
        // Spot-check the standard matricization of the 1..8 tensor.
        assert_eq!(m1.row(0), &[1.0, 3.0, 5.0, 7.0]);
        assert_eq!(m1.row(1), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn unfold_zero_tensor() {
        let t = Tensor3::zeros(2, 3, 4);
        assert_eq!(unfold(&t, 2).shape(), (3, 8));
        assert!(unfold(&t, 3).frobenius_norm() == 0.0);
    }

    #[test]
    fn fold_unfold_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor3::from_fn(3, 4, 2, |_, _, _| rng.sample(StandardNormal));
        for mode in 1..=3 {
            let back = fold(&unfold(&t, mode), mode, t.dims()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn mode_product_identity_and_commutativity() {
        let t = counting_tensor();
        let same = mode_product(&t, &Matrix::identity(2), 1).unwrap();
        assert_eq!(same, t);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = randn_matrix(3, 2, &mut rng);
        let b = randn_matrix(4, 2, &mut rng);
        let ab = mode_product(&mode_product(&t, &a, 1).unwrap(), &b, 2).unwrap();
        let ba = mode_product(&mode_product(&t, &b, 2).unwrap(), &a, 1).unwrap();
        assert!(ab.sub(&ba).frobenius_norm() < 1e-12);
    }

    #[test]
    fn mode_product_unfolding_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor3::from_fn(3, 4, 5, |_, _, _| rng.sample(StandardNormal));
        for mode in 1..=3 {
            let along = [t.dims().0, t.dims().1, t.dims().2][mode - 1];
            let b = randn_matrix(6, along, &mut rng);
            let lhs = unfold(&mode_product(&t, &b, mode).unwrap(), mode);
            let rhs = b.matmul(&unfold(&t, mode));
            assert!(
                lhs.sub(&rhs).frobenius_norm() < 1e-12,
                "identity fails for mode {mode}"
            );
        }
    }

    #[test]
    fn mode_product_dimension_error() {
        let t = counting_tensor();
        assert!(mode_product(&t, &Matrix::zeros(2, 3), 1).is_err());
    }

    #[test]
    fn hosvd_exact_rank_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let core = Tensor3::from_fn(2, 3, 2, |_, _, _| rng.sample(StandardNormal));
        let u1 = orthonormalize(&randn_matrix(6, 2, &mut rng)).unwrap();
        let u2 = orthonormalize(&randn_matrix(7, 3, &mut rng)).unwrap();
        let u3 = orthonormalize(&randn_matrix(4, 2, &mut rng)).unwrap();
        let t = tucker_reconstruct(&core, &u1, &u2, &u3).unwrap();
        let (c, f1, f2, f3) = hosvd(&t, (2, 3, 2)).unwrap();
        let back = tucker_reconstruct(&c, &f1, &f2, &f3).unwrap();
        assert!(back.sub(&t).frobenius_norm() < 1e-8 * t.frobenius_norm().max(1.0));
    }

    #[test]
    fn hosvd_full_rank_lossless_and_norm_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Tensor3::from_fn(3, 4, 2, |_, _, _| rng.sample(StandardNormal));
        let (core, u1, u2, u3) = hosvd(&t, t.dims()).unwrap();
        let back = tucker_reconstruct(&core, &u1, &u2, &u3).unwrap();
        assert!(back.sub(&t).frobenius_norm() < 1e-10);
        assert!((core.frobenius_norm() - t.frobenius_norm()).abs() < 1e-10);
    }

    #[test]
    fn hosvd_rank_one_outer_product() {
        let a = [1.0, -2.0, 0.5];
        let b = [3.0, 1.0];
        let c = [0.5, 2.0, -1.0, 0.25];
        let t = Tensor3::from_fn(3, 2, 4, |i, j, k| a[i] * b[j] * c[k]);
        let (core, _, _, _) = hosvd(&t, (1, 1, 1)).unwrap();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nc = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((core.get(0, 0, 0).abs() - na * nb * nc).abs() < 1e-12);
    }

    #[test]
    fn hosvd_rank_exceeds_dims() {
        let t = Tensor3::zeros(2, 2, 2);
        assert!(hosvd(&t, (3, 1, 1)).is_err());
    }
}
