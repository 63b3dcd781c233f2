//! Small dense matrices, Cholesky factorization and Gaussian log-densities.
//!
//! Dimensions in this crate are the response dimension `p` (a handful of
//! variables), so everything here is plain row-major `Vec<f64>` storage.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, ln, sqrt, LN_2PI};
use crate::{Error, Result};

/// Relative symmetry tolerance accepted by [`cholesky`].
const SYMMETRY_TOL: f64 = 1e-12;
/// Jitter multiplier applied to `trace(m) / p` after a failed factorization.
const JITTER_SCALE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
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
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            if r.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "matrix row",
                    expected: m,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: n, cols: m, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                what: "matrix product",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|&v| abs(v)).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|&v| abs(v)).fold(0.0, f64::max)
    }

    fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor `L` with `L * L^T = m`.
///
/// Fails with [`Error::NotSymmetric`] when `m` is not symmetric within a
/// relative `1e-12`, and with [`Error::DegenerateCovariance`] when a pivot is
/// not strictly positive.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            what: "cholesky input columns",
            expected: m.rows,
            found: m.cols,
        });
    }
    let n = m.rows;
    let scale = m.max_abs();
    for i in 0..n {
        for j in 0..i {
            if abs(m[(i, j)] - m[(j, i)]) > SYMMETRY_TOL * scale {
                return Err(Error::NotSymmetric);
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::DegenerateCovariance);
        }
        let djj = sqrt(d);
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Symmetric positive definite matrix with its cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    values: Matrix,
    chol: Matrix,
    log_det: f64,
    jittered: bool,
}

impl SpdMatrix {
    /// Factorizes `m`. If the first attempt fails, `(1e-8 * trace(m) / p) * I`
    /// is added once and the factorization retried; a zero or negative trace
    /// falls back to an absolute jitter of `1e-8`.
    pub fn new(m: Matrix) -> Result<Self> {
        match cholesky(&m) {
            Ok(chol) => Ok(Self::from_parts(m, chol, false)),
            Err(Error::DegenerateCovariance) => {
                let n = m.rows;
                let mean_diag = m.trace() / n as f64;
                let eps = if mean_diag > 0.0 && mean_diag.is_finite() {
                    JITTER_SCALE * mean_diag
                } else {
                    JITTER_SCALE
                };
                let mut jittered = m;
                for i in 0..n {
                    jittered[(i, i)] += eps;
                }
                let chol = cholesky(&jittered)?;
                Ok(Self::from_parts(jittered, chol, true))
            }
            Err(e) => Err(e),
        }
    }

    /// Symmetrizes `m` as `(m + m^T) / 2` before factorizing.
    pub fn new_symmetrized(mut m: Matrix) -> Result<Self> {
        let n = m.rows;
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                what: "covariance columns",
                expected: n,
                found: m.cols,
            });
        }
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self::new(m)
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Matrix::identity(n)).expect("identity is positive definite")
    }

    fn from_parts(values: Matrix, chol: Matrix, jittered: bool) -> Self {
        let log_det = 2.0 * (0..chol.rows).map(|i| ln(chol[(i, i)])).sum::<f64>();
        SpdMatrix {
            values,
            chol,
            log_det,
            jittered,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.rows
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn cholesky_factor(&self) -> &Matrix {
        &self.chol
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Whether the jitter fallback was needed.
    pub fn was_jittered(&self) -> bool {
        self.jittered
    }

    /// Solves `L y = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.chol[(i, k)] * b[k];
            }
            b[i] = s / self.chol[(i, i)];
        }
    }

    /// Solves `m x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        self.solve_lower_in_place(&mut y);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.chol[(k, i)] * y[k];
            }
            y[i] = s / self.chol[(i, i)];
        }
        y
    }

    /// `d^T m^{-1} d`.
    pub fn mahalanobis_sq(&self, d: &[f64]) -> f64 {
        let mut y = d.to_vec();
        self.solve_lower_in_place(&mut y);
        y.iter().map(|v| v * v).sum()
    }

    /// `a^T m^{-1} b`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut ya = a.to_vec();
        let mut yb = b.to_vec();
        self.solve_lower_in_place(&mut ya);
        self.solve_lower_in_place(&mut yb);
        ya.iter().zip(&yb).map(|(u, v)| u * v).sum()
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        // exact symmetry
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }

    /// Log-density of `N(x | mean, self)` without dimension checks.
    #[inline]
    pub fn log_density(&self, x: &[f64], mean: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(mean.len(), self.dim());
        let mut d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
        self.solve_lower_in_place(&mut d);
        let q: f64 = d.iter().map(|v| v * v).sum();
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + q)
    }
}

/// Multivariate normal log-density, evaluated through the Cholesky factor.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &SpdMatrix) -> Result<f64> {
    let p = cov.dim();
    for (what, v) in [("mvn point", x), ("mvn mean", mean)] {
        if v.len() != p {
            return Err(Error::DimensionMismatch {
                what,
                expected: p,
                found: v.len(),
            });
        }
    }
    Ok(cov.log_density(x, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        assert_eq!(cholesky(&Matrix::identity(2)).unwrap(), Matrix::identity(2));
    }

    #[test]
    fn cholesky_two_by_two() {
        let a = m(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let l = cholesky(&a).unwrap();
        let expected = m(&[&[2.0, 0.0], &[1.0, 2f64.sqrt()]]);
        assert!((0..4).all(|i| (l.as_slice()[i] - expected.as_slice()[i]).abs() < 1e-15));
        let back = l.matmul(&l.transpose()).unwrap();
        assert!((0..4).all(|i| (back.as_slice()[i] - a.as_slice()[i]).abs() < 1e-14));
    }

    #[test]
    fn cholesky_indefinite_fails() {
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(cholesky(&a), Err(Error::DegenerateCovariance));
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let a = m(&[&[1.0, 0.5], &[0.4, 1.0]]);
        assert_eq!(cholesky(&a), Err(Error::NotSymmetric));
    }

    #[test]
    fn jitter_rescues_singular_but_not_indefinite() {
        let z = SpdMatrix::new(Matrix::zeros(3, 3)).unwrap();
        assert!(z.was_jittered());
        assert!((z.values()[(0, 0)] - 1e-8).abs() < 1e-20);

        let rank_one = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let s = SpdMatrix::new(rank_one).unwrap();
        assert!(s.was_jittered());
        assert!((s.values()[(0, 0)] - (1.0 + 1e-8)).abs() < 1e-15);

        let indefinite = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(SpdMatrix::new(indefinite), Err(Error::DegenerateCovariance));
    }

    #[test]
    fn logpdf_standard_cases() {
        let one = SpdMatrix::identity(1);
        let v = mvn_logpdf(&[0.0], &[0.0], &one).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-12);

        let two = SpdMatrix::identity(2);
        let v = mvn_logpdf(&[0.0, 0.0], &[0.0, 0.0], &two).unwrap();
        assert!((v + 1.837_877_066_409_345_5).abs() < 1e-12);
    }

    #[test]
    fn logpdf_matches_explicit_two_by_two_inverse() {
        // closed-form oracle: explicit determinant and adjugate inverse
        let (a, b, c) = (4.0, 2.0, 3.0);
        let det: f64 = a * c - b * b;
        let inv = [[c / det, -b / det], [-b / det, a / det]];
        let x = [1.0, -1.0];
        let quad = x[0] * (inv[0][0] * x[0] + inv[0][1] * x[1]) + x[1] * (inv[1][0] * x[0] + inv[1][1] * x[1]);
        let expected = -(2.0f64 * core::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;

        let cov = SpdMatrix::new(m(&[&[a, b], &[b, c]])).unwrap();
        let got = mvn_logpdf(&x, &[0.0, 0.0], &cov).unwrap();
        assert!((got - expected).abs() < 1e-13, "{got} vs {expected}");
    }

    #[test]
    fn logpdf_dimension_mismatch() {
        let cov = SpdMatrix::identity(2);
        assert!(matches!(
            mvn_logpdf(&[0.0], &[0.0, 0.0], &cov),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn logpdf_integrates_to_one() {
        let sigma2 = 2.5f64;
        let cov = SpdMatrix::new(Matrix::from_diagonal(&[sigma2])).unwrap();
        let sd = sigma2.sqrt();
        let (lo, hi) = (1.0 - 10.0 * sd, 1.0 + 10.0 * sd);
        // composite Simpson
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| mvn_logpdf(&[x], &[1.0], &cov).unwrap().exp();
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(lo + i as f64 * h);
        }
        let integral = s * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "{integral}");
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = SpdMatrix::new(m(&[&[4.0, 2.0, 0.5], &[2.0, 3.0, 0.1], &[0.5, 0.1, 2.0]])).unwrap();
        let inv = a.inverse();
        let prod = a.values().matmul(&inv).unwrap();
        let eye = Matrix::identity(3);
        assert!((0..9).all(|i| (prod.as_slice()[i] - eye.as_slice()[i]).abs() < 1e-12));
        let x = a.solve(&[1.0, 2.0, 3.0]);
        let back: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a.values()[(i, j)] * x[j]).sum()).collect();
        assert!((back[0] - 1.0).abs() < 1e-12 && (back[2] - 3.0).abs() < 1e-12);
    }

    fn spd_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..6).prop_flat_map(|n| {
            proptest::collection::vec(-3.0f64..3.0, n * n).prop_map(move |v| {
                // B B^T + 0.1 I
                let b = Matrix::from_row_major(n, n, v).unwrap();
                let mut s = b.matmul(&b.transpose()).unwrap();
                for i in 0..n {
                    s[(i, i)] += 0.1;
                }
                s
            })
        })
    }

    proptest! {
        #[test]
        fn cholesky_reconstructs(a in spd_strategy()) {
            let l = cholesky(&a).unwrap();
            let back = l.matmul(&l.transpose()).unwrap();
            let err = back.as_slice().iter().zip(a.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-10 * a.norm_inf());
            for i in 0..a.rows() {
                prop_assert!(l[(i, i)] > 0.0);
            }
        }
    }
}
