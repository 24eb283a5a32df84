//! Dense row-major matrix type and the small set of kernels the
//! estimators are built on.
//!
//! Storage is row-major: entry `(i, j)` of an `r x c` matrix lives at
//! `data[i * c + j]`. Every routine in the crate assumes this layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix of `f64` in row-major order.
///
/// Zero-row and zero-column matrices are valid and arise routinely
/// (common dimension `d = 0` or `d = r` leaves empty factor blocks).
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for Matrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for j in 0..self.cols.min(8) {
                write!(f, "{:10.4} ", self.get(i, j))?;
            }
            writeln!(f, "{}", if self.cols > 8 { "..." } else { "" })?;
        }
        if self.rows > 8 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, validating length and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "Matrix::new",
                expected: format!("{} entries", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("Matrix::new"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for values produced by the crate itself.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_raw(rows, cols, data)
    }

    /// Convenience constructor from nested arrays, used heavily in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self::from_raw(r, c, data)
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul dimension mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (l, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[l * n..(l + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self' * other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn dimension mismatch");
        let (m, k, n) = (self.cols, self.rows, other.cols);
        let mut out = Matrix::zeros(m, n);
        for l in 0..k {
            let a_row = &self.data[l * m..(l + 1) * m];
            let b_row = &other.data[l * n..(l + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other'` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row.iter()) {
                    acc += a * b;
                }
                *o += acc;
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix::from_raw(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix::from_raw(self.rows, self.cols, data)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        let data = self.data.iter().map(|a| a * c).collect();
        Matrix::from_raw(self.rows, self.cols, data)
    }

    /// `self += c * other`, in place.
    pub fn axpy(&mut self, c: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Trace inner product `<self, other>`.
    pub fn dot(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn trace(&self) -> f64 {
        assert_eq!(self.rows, self.cols, "trace of non-square matrix");
        (0..self.rows).map(|i| self.data[i * self.cols + i]).sum()
    }

    /// Column-wise concatenation `[self other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hcat row mismatch");
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(self.rows, cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
            out.row_mut(i)[self.cols..].copy_from_slice(other.row(i));
        }
        out
    }

    /// Row-wise concatenation `[self; other]`.
    pub fn vcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "vcat column mismatch");
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Matrix::from_raw(self.rows + other.rows, self.cols, data)
    }

    /// Copy of the sub-block with rows `r0..r1` and columns `c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Matrix {
        assert!(r1 <= self.rows && c1 <= self.cols && r0 <= r1 && c0 <= c1);
        let mut out = Matrix::zeros(r1 - r0, c1 - c0);
        for i in r0..r1 {
            out.row_mut(i - r0)
                .copy_from_slice(&self.row(i)[c0..c1]);
        }
        out
    }

    pub fn columns(&self, c0: usize, c1: usize) -> Matrix {
        self.block(0, self.rows, c0, c1)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// `self * v` for a vector.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Kronecker product `a ⊗ b`, shape `(a.rows * b.rows) x (a.cols * b.cols)`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a.get(i, j);
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                let dst = (i * br + k) * out.cols + j * bc;
                let src = &b.data[k * bc..(k + 1) * bc];
                for (l, &bv) in src.iter().enumerate() {
                    out.data[dst + l] = aij * bv;
                }
            }
        }
    }
    out
}

/// Orthonormal basis for the column space via Householder QR.
///
/// The sign convention makes the diagonal of `R` non-negative, so an
/// already-orthonormal input is returned unchanged up to rounding.
pub fn orthonormalize(m: &Matrix) -> Result<Matrix> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(Matrix::zeros(rows, 0));
    }
    if cols > rows {
        return Err(Error::RankDeficient { wanted: cols });
    }
    let scale = m.max_abs();
    if scale == 0.0 {
        return Err(Error::RankDeficient { wanted: cols });
    }

    // Householder vectors stored in-place below the diagonal of `a`.
    let mut a = m.clone();
    let mut betas = vec![0.0f64; cols];
    let mut diag_signs = vec![1.0f64; cols];
    for k in 0..cols {
        let mut norm2 = 0.0;
        for i in k..rows {
            let v = a.get(i, k);
            norm2 += v * v;
        }
        let norm = norm2.sqrt();
        if norm <= 1e-13 * scale * (rows as f64).sqrt() {
            return Err(Error::RankDeficient { wanted: cols });
        }
        let akk = a.get(k, k);
        let alpha = if akk >= 0.0 { -norm } else { norm };
        // v = x - alpha e1, stored with v[k] implicit.
        let v0 = akk - alpha;
        let mut vnorm2 = v0 * v0;
        for i in k + 1..rows {
            let v = a.get(i, k);
            vnorm2 += v * v;
        }
        let beta = if vnorm2 == 0.0 { 0.0 } else { 2.0 / vnorm2 };
        betas[k] = beta;
        a.set(k, k, v0);
        // R(k,k) = alpha; record its sign to fix Q's column signs later.
        diag_signs[k] = if alpha >= 0.0 { 1.0 } else { -1.0 };
        // Apply reflector to the trailing columns.
        for j in k + 1..cols {
            let mut dot = 0.0;
            for i in k..rows {
                dot += a.get(i, k) * a.get(i, j);
            }
            let t = beta * dot;
            for i in k..rows {
                let v = a.get(i, j) - t * a.get(i, k);
                a.set(i, j, v);
            }
        }
        // Rank check on the implied R diagonal relative to problem scale.
        if alpha.abs() <= 1e-12 * scale * (rows as f64).sqrt() {
            return Err(Error::RankDeficient { wanted: cols });
        }
    }

    // Accumulate Q = H_0 H_1 ... H_{c-1} applied to the first `cols`
    // columns of the identity.
    let mut q = Matrix::zeros(rows, cols);
    for j in 0..cols {
        q.set(j, j, 1.0);
    }
    for k in (0..cols).rev() {
        let beta = betas[k];
        for j in 0..cols {
            let mut dot = 0.0;
            for i in k..rows {
                dot += a.get(i, k) * q.get(i, j);
            }
            let t = beta * dot;
            for i in k..rows {
                let v = q.get(i, j) - t * a.get(i, k);
                q.set(i, j, v);
            }
        }
    }
    // Flip columns where R's diagonal came out negative.
    for j in 0..cols {
        if diag_signs[j] < 0.0 {
            for i in 0..rows {
                let v = -q.get(i, j);
                q.set(i, j, v);
            }
        }
    }
    Ok(q)
}

/// Frobenius sin-Θ distance between the column spaces of two orthonormal
/// matrices: `||U U' - V V'||_F / sqrt(2)`.
pub fn sin_theta_dist(u: &Matrix, v: &Matrix) -> Result<f64> {
    if u.shape() != v.shape() {
        return Err(Error::ShapeMismatch {
            op: "sin_theta_dist",
            expected: format!("{:?}", u.shape()),
            got: format!("{:?}", v.shape()),
        });
    }
    for (name, m) in [("u", u), ("v", v)] {
        let gram = m.matmul_tn(m);
        let dev = gram.sub(&Matrix::identity(m.cols())).frobenius_norm();
        if dev > 1e-8 {
            return Err(Error::InvalidArg(format!(
                "sin_theta_dist: {name} is not orthonormal (||M'M - I|| = {dev:e})"
            )));
        }
    }
    let pu = u.matmul_nt(u);
    let pv = v.matmul_nt(v);
    Ok(pu.sub(&pv).frobenius_norm() / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Matrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let c = a.matmul(&b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
        let tn = a.transpose().matmul(&b);
        assert_eq!(a.matmul_tn(&b).data(), tn.data());
        let nt = a.matmul(&b.transpose());
        assert_eq!(a.matmul_nt(&b).data(), nt.data());
    }

    #[test]
    fn zero_dim_matmul() {
        let a = Matrix::zeros(4, 0);
        let b = Matrix::zeros(0, 3);
        let c = a.matmul(&b);
        assert_eq!(c.shape(), (4, 3));
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kron_identity_block_diag() {
        let b = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let k = kronecker(&Matrix::identity(2), &b);
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(2, 2), 1.0);
        assert_eq!(k.get(3, 2), 3.0);
        assert_eq!(k.get(0, 2), 0.0);
    }

    #[test]
    fn kron_hand_expansion() {
        let a = Matrix::from_rows(&[&[1.0, 2.0]]);
        let b = Matrix::from_rows(&[&[3.0], &[4.0]]);
        let k = kronecker(&a, &b);
        assert_eq!(k.shape(), (2, 2));
        assert_eq!(k.data(), &[3.0, 6.0, 4.0, 8.0]);
    }

    #[test]
    fn kron_norm_identity() {
        let a = Matrix::from_rows(&[&[0.3, -1.0], &[2.0, 0.1], &[0.0, 1.5]]);
        let b = Matrix::from_rows(&[&[1.0, 4.0, -2.0], &[0.5, 0.0, 3.0]]);
        let k = kronecker(&a, &b);
        assert_close(
            k.frobenius_norm(),
            a.frobenius_norm() * b.frobenius_norm(),
            1e-12,
        );
    }

    #[test]
    fn orthonormalize_scaled_axes() {
        let m = Matrix::from_rows(&[&[2.0, 0.0], &[0.0, 3.0], &[0.0, 0.0]]);
        let q = orthonormalize(&m).unwrap();
        assert_close(q.get(0, 0), 1.0, 1e-14);
        assert_close(q.get(1, 1), 1.0, 1e-14);
        assert_close(q.get(2, 0), 0.0, 1e-14);
        assert_close(q.get(2, 1), 0.0, 1e-14);
    }

    #[test]
    fn orthonormalize_keeps_orthonormal_input() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let m = Matrix::from_rows(&[&[s, s], &[s, -s]]);
        let q = orthonormalize(&m).unwrap();
        assert!(q.sub(&m).frobenius_norm() < 1e-12);
    }

    #[test]
    fn orthonormalize_rejects_rank_deficient() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0]]);
        assert!(matches!(
            orthonormalize(&m),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn sin_theta_basics() {
        let e1 = Matrix::from_rows(&[&[1.0], &[0.0]]);
        let e2 = Matrix::from_rows(&[&[0.0], &[1.0]]);
        assert_close(sin_theta_dist(&e1, &e1).unwrap(), 0.0, 1e-14);
        assert_close(sin_theta_dist(&e1, &e2).unwrap(), 1.0, 1e-14);
    }

    #[test]
    fn sin_theta_rejects_non_orthonormal() {
        let m = Matrix::from_rows(&[&[2.0], &[0.0]]);
        let e1 = Matrix::from_rows(&[&[1.0], &[0.0]]);
        assert!(sin_theta_dist(&m, &e1).is_err());
    }
}
