//! Dense linear algebra for small design matrices.
//!
//! Policies maintain the inverse of a regularized design matrix directly:
//! every observation is a rank-one correction applied through
//! [`sherman_morrison_update`], so nothing here ever factorizes a matrix on
//! the hot path. [`direct_inverse`] (Gauss-Jordan) exists so tests and the
//! harness can cross-check the incrementally maintained inverse against a
//! from-scratch computation.
//!
//! Dimension mismatches and non-finite inputs are programmer errors and
//! panic; only genuinely data-dependent failures (singular input) surface as
//! [`LinalgError`].

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    /// Pivot magnitude fell below the threshold during elimination.
    #[error("matrix is singular to working precision (pivot {pivot:.3e} at column {col})")]
    Singular { col: usize, pivot: f64 },
}

/// Pivots smaller than this are treated as zero by [`direct_inverse`].
pub const PIVOT_EPS: f64 = 1e-12;

/// Row-major dense matrix. `data[r * cols + c]` is entry (r, c).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Identity scaled by `s`.
    pub fn scaled_identity(n: usize, s: f64) -> Self {
        assert!(s.is_finite(), "scale must be finite");
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = s;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        assert!(cols > 0, "matrix needs at least one column");
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols, "row {i} has inconsistent length");
            assert!(r.iter().all(|v| v.is_finite()), "row {i} has non-finite entries");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// y = M x.
    pub fn mat_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mat_vec dimension mismatch");
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            y[r] = dot(row, x);
        }
        y
    }

    /// Adds `c * u v^T` in place.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], c: f64) {
        assert_eq!(u.len(), self.rows, "add_outer row mismatch");
        assert_eq!(v.len(), self.cols, "add_outer col mismatch");
        for r in 0..self.rows {
            let base = r * self.cols;
            let cu = c * u[r];
            for (j, vj) in v.iter().enumerate() {
                self.data[base + j] += cu * vj;
            }
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Inner product. Panics on length mismatch.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot dimension mismatch");
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Rank-one inverse update: given `a_inv` = A^-1, returns (A + c u u^T)^-1
/// without touching A itself:
///
///   (A + c u u^T)^-1 = A^-1 - c (A^-1 u)(A^-1 u)^T / (1 + c u^T A^-1 u)
///
/// The result is re-symmetrized by averaging with its transpose so that
/// round-off never accumulates into an asymmetric inverse. `c` must be
/// non-negative: downweighted observations shrink `c`, they never flip its
/// sign, which keeps the denominator bounded away from zero for any PD
/// `a_inv`.
pub fn sherman_morrison_update(a_inv: &Matrix, u: &[f64], c: f64) -> Matrix {
    let n = a_inv.rows();
    assert_eq!(a_inv.cols(), n, "a_inv must be square");
    assert_eq!(u.len(), n, "update vector dimension mismatch");
    assert!(c.is_finite() && c >= 0.0, "update weight must be finite and >= 0, got {c}");
    assert!(u.iter().all(|v| v.is_finite()), "update vector has non-finite entries");

    let au = a_inv.mat_vec(u);
    let denom = 1.0 + c * dot(u, &au);
    assert!(
        denom > PIVOT_EPS,
        "rank-one denominator {denom:.3e} is not positive; a_inv is not PD"
    );

    let mut out = a_inv.clone();
    out.add_outer(&au, &au, -c / denom);
    // Exact symmetry: (x + y) / 2 is commutative in x, y.
    for r in 0..n {
        for cidx in (r + 1)..n {
            let avg = 0.5 * (out.get(r, cidx) + out.get(cidx, r));
            out.set(r, cidx, avg);
            out.set(cidx, r, avg);
        }
    }
    out
}

/// sqrt(x^T a_inv x). The quadratic form of a PSD matrix is non-negative up
/// to round-off; values in [-1e-12, 0) clamp to zero, anything lower panics
/// because the caller's inverse has lost positive-definiteness.
pub fn mahalanobis_norm(x: &[f64], a_inv: &Matrix) -> f64 {
    let q = quadratic_form(x, a_inv);
    if q < 0.0 {
        assert!(q >= -1e-12, "quadratic form {q:.3e} is negative beyond round-off");
        return 0.0;
    }
    q.sqrt()
}

/// x^T m x.
pub fn quadratic_form(x: &[f64], m: &Matrix) -> f64 {
    assert_eq!(m.rows(), m.cols(), "quadratic form needs a square matrix");
    assert_eq!(x.len(), m.rows(), "quadratic form dimension mismatch");
    dot(x, &m.mat_vec(x))
}

/// From-scratch inverse by Gauss-Jordan elimination with partial pivoting.
/// Quadratic-space, cubic-time; used for cross-checks and head refits, never
/// per-round. Returns [`LinalgError::Singular`] when the best available
/// pivot drops below [`PIVOT_EPS`].
pub fn direct_inverse(a: &Matrix) -> Result<Matrix, LinalgError> {
    let n = a.rows();
    assert_eq!(a.cols(), n, "direct_inverse needs a square matrix");
    assert!(a.is_finite(), "direct_inverse input has non-finite entries");

    // Augmented [work | inv], inv starts as I.
    let mut work = a.clone();
    let mut inv = Matrix::identity(n);

    for col in 0..n {
        // Partial pivot: largest |entry| on or below the diagonal.
        let mut pivot_row = col;
        let mut pivot_val = work.get(col, col).abs();
        for r in (col + 1)..n {
            let v = work.get(r, col).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val < PIVOT_EPS {
            return Err(LinalgError::Singular { col, pivot: pivot_val });
        }
        if pivot_row != col {
            swap_rows(&mut work, col, pivot_row);
            swap_rows(&mut inv, col, pivot_row);
        }

        let p = work.get(col, col);
        for j in 0..n {
            work.set(col, j, work.get(col, j) / p);
            inv.set(col, j, inv.get(col, j) / p);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = work.get(r, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                work.set(r, j, work.get(r, j) - f * work.get(col, j));
                inv.set(r, j, inv.get(r, j) - f * inv.get(col, j));
            }
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    for j in 0..m.cols() {
        let t = m.get(a, j);
        m.set(a, j, m.get(b, j));
        m.set(b, j, t);
    }
}
