//! Dense linear algebra kernel.
//!
//! Everything the design criteria need fits in a few hundred rows at most, so
//! this is a plain row-major matrix with a Cholesky factorization on top. All
//! determinants are carried in log space.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Relative pivot tolerance used by [`spd_factorize`].
pub const PD_TOLERANCE: f64 = 1e-12;

/// Relative asymmetry accepted by [`spd_factorize`] before symmetrizing.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |m[{row},{col}] - m[{col},{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix has a non-finite entry at ({row},{col})")]
    NonFinite { row: usize, col: usize },
    /// Singular or indefinite input: the pivot at `pivot` (0-based) fell
    /// below tolerance.
    #[error("matrix is not positive definite: pivot {pivot} = {value:e}")]
    Singular { pivot: usize, value: f64 },
}

/// Row-major dense matrix of finite reals.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major values, rejecting NaN and infinities.
    pub fn from_row_slice(rows: usize, cols: usize, values: &[f64]) -> Result<Self, LinalgError> {
        if values.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: format!("{} values", rows * cols),
                found: format!("{} values", values.len()),
            });
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: k / cols.max(1),
                col: k % cols.max(1),
            });
        }
        Ok(Matrix {
            rows,
            cols,
            data: values.to_vec(),
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::DimensionMismatch {
                    expected: format!("{cols} columns"),
                    found: format!("{} columns in row {i}", r.len()),
                });
            }
            values.extend_from_slice(r);
        }
        Matrix::from_row_slice(rows.len(), cols, &values)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// A single column vector.
    pub fn column_vector(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
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

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product. Panics when the inner dimensions disagree.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        out
    }

    /// `selfᵀ · self`, exactly symmetric.
    pub fn crossprod(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..self.cols {
                    out.data[a * self.cols + b] += ra * r[b];
                }
            }
        }
        for a in 0..self.cols {
            for b in 0..a {
                out.data[a * self.cols + b] = out.data[b * self.cols + a];
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `(m + mᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square(), "symmetrize: matrix is not square");
        let n = self.rows;
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Columns `cols` of `self`, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, cols.len(), |i, j| self[(i, cols[j])])
    }

    /// Principal submatrix on `idx`.
    pub fn principal_submatrix(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), idx.len(), |i, j| self[(idx[i], idx[j])])
    }

    /// `[self | other]`.
    pub fn hstack(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hstack: row mismatch");
        let cols = self.cols + other.cols;
        Matrix::from_fn(self.rows, cols, |i, j| {
            if j < self.cols {
                self[(i, j)]
            } else {
                other[(i, j - self.cols)]
            }
        })
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Cholesky factor `L` of a symmetric positive-definite matrix, `m = L·Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdFactorization {
    factor: Matrix,
    log_det: f64,
}

impl SpdFactorization {
    pub fn dimension(&self) -> usize {
        self.factor.rows
    }

    /// Lower-triangular factor with strictly positive diagonal.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// `ln det(m)`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `L·Lᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        self.factor.matmul(&self.factor.transpose())
    }

    /// Solves `L·Y = rhs` in place, column by column.
    pub fn forward_substitute(&self, rhs: &mut Matrix) -> Result<(), LinalgError> {
        self.check_rhs(rhs)?;
        forward_in_place(&self.factor, rhs);
        Ok(())
    }

    /// Solves `m·X = rhs`.
    pub fn solve(&self, rhs: &Matrix) -> Result<Matrix, LinalgError> {
        self.check_rhs(rhs)?;
        let mut x = rhs.clone();
        forward_in_place(&self.factor, &mut x);
        backward_in_place(&self.factor, &mut x);
        Ok(x)
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        Ok(self.solve(&Matrix::column_vector(rhs))?.data)
    }

    /// `m⁻¹`, exactly symmetric.
    pub fn inverse(&self) -> Matrix {
        let n = self.dimension();
        let mut inv = self
            .solve(&Matrix::identity(n))
            .expect("identity has matching dimension");
        inv.symmetrize();
        inv
    }

    /// `L⁻¹`, lower triangular.
    pub fn inverse_factor(&self) -> Matrix {
        let mut w = Matrix::identity(self.dimension());
        forward_in_place(&self.factor, &mut w);
        w
    }

    fn check_rhs(&self, rhs: &Matrix) -> Result<(), LinalgError> {
        if rhs.rows != self.dimension() {
            return Err(LinalgError::DimensionMismatch {
                expected: format!("{} rows", self.dimension()),
                found: format!("{} rows", rhs.rows),
            });
        }
        Ok(())
    }
}

fn forward_in_place(l: &Matrix, b: &mut Matrix) {
    let n = l.rows;
    let k = b.cols;
    for i in 0..n {
        let lii = l[(i, i)];
        for c in 0..k {
            let mut s = b.data[i * k + c];
            for j in 0..i {
                s -= l.data[i * n + j] * b.data[j * k + c];
            }
            b.data[i * k + c] = s / lii;
        }
    }
}

fn backward_in_place(l: &Matrix, b: &mut Matrix) {
    let n = l.rows;
    let k = b.cols;
    for i in (0..n).rev() {
        let lii = l[(i, i)];
        for c in 0..k {
            let mut s = b.data[i * k + c];
            for j in i + 1..n {
                s -= l.data[j * n + i] * b.data[j * k + c];
            }
            b.data[i * k + c] = s / lii;
        }
    }
}

/// In-place Cholesky on the lower triangle of a row-major `n×n` buffer.
///
/// Returns `ln det` on success. A pivot is rejected when it is not above
/// `PD_TOLERANCE` times the original diagonal entry in its position, so an
/// exactly aliased column fails regardless of how large other diagonal
/// entries are. The upper triangle is left untouched.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<f64, LinalgError> {
    debug_assert_eq!(a.len(), n * n);
    let mut log_det = 0.0;
    for j in 0..n {
        let orig = a[j * n + j];
        let mut d = orig;
        for k in 0..j {
            let v = a[j * n + k];
            d -= v * v;
        }
        if !(d > PD_TOLERANCE * orig.abs()) || !d.is_finite() {
            return Err(LinalgError::Singular { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        log_det += 2.0 * ljj.ln();
        for i in j + 1..n {
            let mut s = a[i * n + j];
            let (ri, rj) = (i * n, j * n);
            for k in 0..j {
                s -= a[ri + k] * a[rj + k];
            }
            a[i * n + j] = s / ljj;
        }
    }
    Ok(log_det)
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// The input is symmetrized as `(m + mᵀ)/2` first; asymmetry beyond
/// [`SYMMETRY_TOLERANCE`] relative to the largest entry is an error.
pub fn spd_factorize(m: &Matrix) -> Result<SpdFactorization, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    if let Some(k) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite {
            row: k / n,
            col: k % n,
        });
    }
    let scale = m.max_abs().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in 0..i {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > SYMMETRY_TOLERANCE * scale {
                return Err(LinalgError::NotSymmetric { row: i, col: j, gap });
            }
        }
    }
    let mut a = m.clone();
    a.symmetrize();
    let log_det = cholesky_in_place(&mut a.data, n)?;
    for i in 0..n {
        for j in i + 1..n {
            a.data[i * n + j] = 0.0;
        }
    }
    Ok(SpdFactorization { factor: a, log_det })
}

/// Solves `m·x = rhs` given the factorization of `m`.
pub fn solve_spd(f: &SpdFactorization, rhs: &Matrix) -> Result<Matrix, LinalgError> {
    f.solve(rhs)
}

/// `xᵀ Σ⁻¹ x` where `sigma` is the factorization of Σ.
pub fn gram(x: &Matrix, sigma: &SpdFactorization) -> Result<Matrix, LinalgError> {
    let mut w = x.clone();
    sigma.forward_substitute(&mut w)?;
    Ok(w.crossprod())
}

/// Reciprocal 1-norm condition number of an SPD matrix, or 0 when singular.
pub fn rcond_spd(m: &Matrix) -> f64 {
    match spd_factorize(m) {
        Ok(f) => {
            let inv = f.inverse();
            let denom = m.norm_one() * inv.norm_one();
            if denom > 0.0 && denom.is_finite() {
                1.0 / denom
            } else {
                0.0
            }
        }
        Err(_) => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn factorize_identity() {
        let f = spd_factorize(&Matrix::identity(3)).unwrap();
        assert_eq!(f.factor(), &Matrix::identity(3));
        assert_eq!(f.log_det(), 0.0);
    }

    #[test]
    fn factorize_two_by_two() {
        let f = spd_factorize(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert_relative_eq!(f.log_det(), 3.0_f64.ln(), epsilon = 1e-14);
        let l = f.factor();
        assert_eq!(l[(0, 1)], 0.0);
        assert!(l[(0, 0)] > 0.0 && l[(1, 1)] > 0.0);
        let diag_sum: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
        assert_relative_eq!(f.log_det(), 2.0 * diag_sum, epsilon = 1e-14);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let err = spd_factorize(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        match err {
            LinalgError::Singular { pivot, value } => {
                assert_eq!(pivot, 1);
                assert!(value < 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aliased_column_is_singular() {
        // second column duplicates the first
        let x = m(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(
            spd_factorize(&x.crossprod()),
            Err(LinalgError::Singular { pivot: 1, .. })
        ));
    }

    #[test]
    fn rejects_asymmetric_and_nonsquare() {
        assert!(matches!(
            spd_factorize(&m(&[&[2.0, 1.0], &[0.0, 2.0]])),
            Err(LinalgError::NotSymmetric { .. })
        ));
        assert!(matches!(
            spd_factorize(&Matrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { .. })
        ));
    }

    #[test]
    fn from_rows_rejects_nan() {
        assert!(matches!(
            Matrix::from_rows(&[[1.0, f64::NAN]]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
    }

    #[test]
    fn solve_examples() {
        let f = spd_factorize(&Matrix::identity(2)).unwrap();
        assert_eq!(f.solve_vec(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);

        let f = spd_factorize(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let x = f.solve_vec(&[3.0, 3.0]).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-14);

        let f = spd_factorize(&m(&[&[4.0, 0.0], &[0.0, 4.0]])).unwrap();
        let x = solve_spd(&f, &Matrix::column_vector(&[8.0, 4.0])).unwrap();
        assert_eq!(x.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn solve_dimension_mismatch() {
        let f = spd_factorize(&Matrix::identity(2)).unwrap();
        assert!(matches!(
            f.solve(&Matrix::zeros(3, 1)),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gram_examples() {
        let id = spd_factorize(&Matrix::identity(3)).unwrap();
        assert_eq!(gram(&Matrix::identity(3), &id).unwrap(), Matrix::identity(3));

        let ones = Matrix::from_fn(4, 1, |_, _| 1.0);
        let id4 = spd_factorize(&Matrix::identity(4)).unwrap();
        assert_eq!(gram(&ones, &id4).unwrap().as_slice(), &[4.0]);

        let sigma = spd_factorize(&m(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        let g = gram(&Matrix::from_fn(2, 1, |_, _| 1.0), &sigma).unwrap();
        assert_relative_eq!(g[(0, 0)], 2.0 / 3.0, epsilon = 1e-14);

        assert!(gram(&ones, &id).is_err());
    }

    #[test]
    fn scaled_identity_log_det() {
        for &(n, c) in &[(1usize, 2.5f64), (5, 0.1), (12, 7.0)] {
            let f = spd_factorize(&Matrix::identity(n).scale(c)).unwrap();
            assert!((f.log_det() - n as f64 * c.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn rcond_of_identity_and_singular() {
        assert_relative_eq!(rcond_spd(&Matrix::identity(4)), 1.0);
        assert_eq!(rcond_spd(&m(&[&[1.0, 1.0], &[1.0, 1.0]])), 0.0);
    }
}
