//! Small dense linear algebra over `f64`.
//!
//! Problem sizes here are tiny (dimension rarely above 16), so everything is
//! direct: Gaussian elimination with partial pivoting, power iteration for
//! the Perron radius of a nonnegative matrix, cyclic Jacobi sweeps for
//! symmetric eigenvalues. No external solver dependency is warranted at this
//! scale.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

#[derive(Clone, Debug, PartialEq)]
pub enum NumericsError {
    /// Matrix data length does not match rows*cols, or entries are not finite.
    BadShape,
    /// Pivot fell below the singularity threshold during elimination.
    SingularMatrix,
    /// Matrix is not symmetric within tolerance.
    NotSymmetric,
    /// Matrix is not positive definite (Cholesky pivot not positive).
    NotPositiveDefinite,
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::BadShape => write!(f, "matrix shape/data mismatch or nonfinite entry"),
            NumericsError::SingularMatrix => write!(f, "matrix is singular to working precision"),
            NumericsError::NotSymmetric => write!(f, "matrix is not symmetric"),
            NumericsError::NotPositiveDefinite => write!(f, "matrix is not positive definite"),
        }
    }
}

impl core::error::Error for NumericsError {}

/// Dense row-major matrix. Entries are finite by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(NumericsError::BadShape);
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::BadShape);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds from nested rows; convenient in tests and model setup.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, NumericsError> {
        if rows.is_empty() {
            return Err(NumericsError::BadShape);
        }
        let c = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * c);
        for r in rows {
            if r.len() != c {
                return Err(NumericsError::BadShape);
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), c, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { rows: n, cols: n, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec: dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut s = 0.0;
            for j in 0..self.cols {
                s += row[j] * x[j];
            }
            y[i] = s;
        }
        y
    }

    /// y = A^T x.
    pub fn mul_vec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "mul_vec_t: dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            for j in 0..self.cols {
                y[j] += row[j] * x[i];
            }
        }
        y
    }

    pub fn mul_mat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "mul_mat: dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + a * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    /// Entrywise absolute value.
    pub fn abs(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.abs()).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        math::norm_inf(&self.data)
    }

    /// Principal submatrix on the index set `idx` (sorted, in range).
    pub fn principal_submatrix(&self, idx: &[usize]) -> Matrix {
        let p = idx.len();
        let mut out = Matrix::zeros(p, p);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out.set(a, b, self.get(i, j));
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|x| x * x).sum())
    }
}

/// Solves A x = y by Gaussian elimination with partial pivoting.
///
/// A pivot whose magnitude falls below `1e-12 * max_abs(A)` is treated as
/// singular rather than divided through.
pub fn solve_linear(a: &Matrix, y: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if !a.is_square() || y.len() != a.rows() {
        return Err(NumericsError::BadShape);
    }
    let n = a.rows();
    let threshold = 1e-12 * a.max_abs().max(f64::MIN_POSITIVE);
    let mut m = a.data.clone();
    let mut b = y.to_vec();
    if b.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::BadShape);
    }

    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in (col + 1)..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < threshold {
            return Err(NumericsError::SingularMatrix);
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            b.swap(col, piv);
        }
        let d = m[col * n + col];
        for r in (col + 1)..n {
            let f = m[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            m[r * n + col] = 0.0;
            for j in (col + 1)..n {
                m[r * n + j] -= f * m[col * n + j];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = b[col];
        for j in (col + 1)..n {
            s -= m[col * n + j] * b[j];
        }
        b[col] = s / m[col * n + col];
    }
    Ok(b)
}

/// Power-iteration estimate of a spectral radius.
#[derive(Clone, Copy, Debug)]
pub struct SpectralEstimate {
    pub value: f64,
    /// False when the iteration stagnated before reaching the target
    /// relative accuracy; `value` is then the last iterate.
    pub converged: bool,
}

/// Spectral radius of |V| (entrywise absolute value) by power iteration.
///
/// A nonnegative matrix has spectral radius zero exactly when its sparsity
/// digraph is acyclic, so that case is decided exactly up front (power
/// iteration on a nilpotent defective matrix would crawl at O(1/k)).
/// Otherwise iterates on |V| + I from the all-ones vector. The shift leaves
/// eigenvectors alone and moves the Perron root to rho + 1, but makes the
/// matrix primitive whenever it is irreducible, so the iteration cannot
/// cycle (plain power iteration oscillates on e.g. [[0,a],[b,0]]). Target
/// relative accuracy 1e-8 within 10000 iterations; stagnation returns the
/// current estimate flagged as approximate.
pub fn spectral_radius_abs(v: &Matrix) -> SpectralEstimate {
    assert!(v.is_square(), "spectral_radius_abs: matrix must be square");
    let a = v.abs();
    let n = a.rows();
    if sparsity_is_acyclic(&a) {
        return SpectralEstimate { value: 0.0, converged: true };
    }
    let mut x = vec![1.0; n];
    let mut est = 1.0f64;
    for _ in 0..10_000 {
        let mut y = a.mul_vec(&x);
        for i in 0..n {
            y[i] += x[i];
        }
        let norm = math::norm_inf(&y);
        let prev = est;
        est = norm / math::norm_inf(&x);
        for e in x.iter_mut().zip(y) {
            *e.0 = e.1 / norm;
        }
        if (est - prev).abs() <= 1e-8 * est {
            return SpectralEstimate { value: (est - 1.0).max(0.0), converged: true };
        }
    }
    SpectralEstimate { value: (est - 1.0).max(0.0), converged: false }
}

/// Kahn's algorithm on the nonzero pattern: true iff no directed cycle.
fn sparsity_is_acyclic(a: &Matrix) -> bool {
    let n = a.rows();
    // indegree of j counts nonzero entries a[i][j] feeding it, i -> j.
    let mut indeg = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if a.get(i, j) != 0.0 {
                indeg[j] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
    let mut removed = 0;
    while let Some(i) = queue.pop() {
        removed += 1;
        for j in 0..n {
            if a.get(i, j) != 0.0 {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    queue.push(j);
                }
            }
        }
    }
    removed == n
}

/// Smallest eigenvalue of a symmetric matrix by cyclic Jacobi sweeps.
///
/// Symmetry is required up to `1e-12 * max(1, max_abs(A))`; the sweep works
/// on the symmetrized part. Off-diagonal mass is driven below
/// `1e-8 * frobenius` (or machine floor), which is ample for the
/// definiteness checks this backs.
pub fn min_eigenvalue_sym(a: &Matrix) -> Result<f64, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::BadShape);
    }
    let n = a.rows();
    let tol = 1e-12 * a.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > tol {
                return Err(NumericsError::NotSymmetric);
            }
        }
    }
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m.get(i, j) + m.get(j, i));
            m.set(i, j, s);
            m.set(j, i, s);
        }
    }
    let fro = m.frobenius_norm().max(f64::MIN_POSITIVE);
    let target = 1e-8 * fro;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j) * m.get(i, j);
            }
        }
        if math::sqrt(2.0 * off) <= target {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = 0.5 * (aqq - app) / apq;
                // Stable tangent of the rotation angle.
                let t = if theta >= 0.0 {
                    1.0 / (theta + math::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + math::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let akp = m.get(k, p);
                    let akq = m.get(k, q);
                    m.set(k, p, c * akp - s * akq);
                    m.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = m.get(p, k);
                    let aqk = m.get(q, k);
                    m.set(p, k, c * apk - s * aqk);
                    m.set(q, k, s * apk + c * aqk);
                }
            }
        }
    }
    let mut min = f64::INFINITY;
    for i in 0..n {
        min = min.min(m.get(i, i));
    }
    Ok(min)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::BadShape);
    }
    let n = a.rows();
    let tol = 1e-12 * a.max_abs().max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > tol {
                return Err(NumericsError::NotSymmetric);
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 {
                    return Err(NumericsError::NotPositiveDefinite);
                }
                l.set(i, j, math::sqrt(s));
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn solve_oblique_reflection_system() {
        // Hand elimination: det = 1.05, solution components are
        // (-0.55/1.05, -0.58/1.05, -0.415/1.05).
        let a = mat(&[&[1.0, 0.1, -0.2], &[-0.1, 1.0, 0.0], &[0.2, 0.0, 1.0]]);
        let y = [-0.5, -0.5, -0.5];
        let x = solve_linear(&a, &y).unwrap();
        assert_relative_eq!(x[0], -0.55 / 1.05, max_relative = 1e-12);
        assert_relative_eq!(x[1], -0.58 / 1.05, max_relative = 1e-12);
        assert_relative_eq!(x[2], -0.415 / 1.05, max_relative = 1e-12);
        // Residual check.
        let r = a.mul_vec(&x);
        for i in 0..3 {
            assert_relative_eq!(r[i], y[i], epsilon = 1e-12);
        }
        assert_relative_eq!(x[0], -0.52381, epsilon = 5e-6);
        assert_relative_eq!(x[1], -0.55238, epsilon = 5e-6);
        assert_relative_eq!(x[2], -0.39524, epsilon = 5e-6);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = mat(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(solve_linear(&a, &[1.0, 2.0]), Err(NumericsError::SingularMatrix));
    }

    #[test]
    fn solve_needs_pivoting() {
        // Zero leading pivot forces a row swap.
        let a = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let x = solve_linear(&a, &[3.0, 7.0]).unwrap();
        assert_eq!(x, vec![7.0, 3.0]);
    }

    #[test]
    fn spectral_radius_constant_row_sums() {
        // Zero diagonal, 0.1 elsewhere in dimension 8: row sums are 0.7 and
        // the all-ones vector is the Perron eigenvector.
        let n = 8;
        let mut v = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    v.set(i, j, 0.1);
                }
            }
        }
        let est = spectral_radius_abs(&v);
        assert!(est.converged);
        assert_relative_eq!(est.value, 0.7, max_relative = 1e-8);
    }

    #[test]
    fn spectral_radius_uses_absolute_values() {
        // Signs must not matter.
        let v = mat(&[&[0.0, -0.3], &[0.3, 0.0]]);
        let est = spectral_radius_abs(&v);
        assert_relative_eq!(est.value, 0.3, max_relative = 1e-7);
    }

    #[test]
    fn spectral_radius_nilpotent_exact_zero() {
        // Acyclic sparsity pattern: decided exactly, no iteration.
        let v = mat(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let est = spectral_radius_abs(&v);
        assert_eq!(est.value, 0.0);
        assert!(est.converged);
        // A 3-cycle with tiny weights is not acyclic: radius is positive.
        let c = mat(&[
            &[0.0, 1e-3, 0.0],
            &[0.0, 0.0, 1e-3],
            &[1e-3, 0.0, 0.0],
        ]);
        let est = spectral_radius_abs(&c);
        assert!(est.value > 0.0);
        assert_relative_eq!(est.value, 1e-3, max_relative = 1e-4);
    }

    #[test]
    fn spectral_radius_cyclic_pair() {
        // Eigenvalues of [[0,a],[b,0]] are +-sqrt(ab); unshifted power
        // iteration oscillates on this one.
        let v = mat(&[&[0.0, 0.9], &[0.001, 0.0]]);
        let est = spectral_radius_abs(&v);
        assert!(est.converged);
        // Stopping on a 1e-8 increment leaves a geometric tail of error,
        // so the final accuracy is looser than the increment.
        assert_relative_eq!(est.value, (0.9f64 * 0.001).sqrt(), max_relative = 1e-4);
    }

    #[test]
    fn min_eigenvalue_exchangeable_matrix() {
        // 1 on the diagonal, -0.1 off: eigenvalues 1 + 7b = 0.3 (ones
        // vector) and 1 - b = 1.1 (multiplicity 7) for b = -0.1.
        let n = 8;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, if i == j { 1.0 } else { -0.1 });
            }
        }
        let min = min_eigenvalue_sym(&a).unwrap();
        assert_relative_eq!(min, 0.3, epsilon = 1e-8);
    }

    #[test]
    fn min_eigenvalue_rejects_asymmetric() {
        let a = mat(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert_eq!(min_eigenvalue_sym(&a), Err(NumericsError::NotSymmetric));
    }

    #[test]
    fn min_eigenvalue_2x2_closed_form() {
        let a = mat(&[&[2.0, 0.7], &[0.7, 1.0]]);
        // Eigenvalues of [[a,b],[b,d]]: ((a+d) +- sqrt((a-d)^2+4b^2))/2.
        let expect = (3.0 - (1.0f64 + 4.0 * 0.49).sqrt()) / 2.0;
        let min = min_eigenvalue_sym(&a).unwrap();
        assert_relative_eq!(min, expect, epsilon = 1e-10);
    }

    #[test]
    fn cholesky_roundtrip() {
        let n = 5;
        let rho = 0.6;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g.set(i, j, if i == j { 1.0 } else { rho });
            }
        }
        let l = cholesky(&g).unwrap();
        let back = l.mul_mat(&l.transpose());
        for i in 0..n {
            for j in 0..n {
                assert_relative_eq!(back.get(i, j), g.get(i, j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = mat(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert_eq!(cholesky(&a), Err(NumericsError::NotPositiveDefinite));
    }

    #[test]
    fn matrix_rejects_nonfinite() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }
}
