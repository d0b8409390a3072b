//! Small dense linear algebra.
//!
//! Everything here works on matrices of dimension at most a few dozen
//! (Kronecker systems for 4x4 Lyapunov equations are the largest), so the
//! algorithms are the plain textbook ones: Gauss-Jordan with partial
//! pivoting, cyclic Jacobi for symmetric spectra, power iteration for the
//! induced 2-norm.

use std::fmt;
use std::ops::{Index, IndexMut, Mul};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is singular to working precision (pivot column {col})")]
    Singular { col: usize },
    #[error("matrix is not positive definite (pivot {index} = {value:e})")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

/// Dense row-major real matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::InvalidDimension(format!("{rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidDimension(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite { row: pos / cols, col: pos % cols });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::InvalidDimension("ragged rows".into()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "vector length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `x' M` for a row vector `x`.
    pub fn vec_mul(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "vector length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += xi * a;
            }
        }
        out
    }

    pub fn row_abs_sum(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v.abs()).sum()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows).map(|i| self.row_abs_sum(i)).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(1.0);
        (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol * scale))
    }

    pub fn symmetrize(&self) -> Self {
        self.add(&self.transpose()).scale(0.5)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
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

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// The n x n matrix with entry (i, j) = i^j (0-based), using 0^0 = 1.
pub fn vandermonde(n: usize) -> Result<Matrix, LinalgError> {
    if n < 2 {
        return Err(LinalgError::InvalidDimension(format!("vandermonde needs n >= 2, got {n}")));
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        let mut p = 1.0;
        for j in 0..n {
            m[(i, j)] = p;
            p *= i as f64;
        }
    }
    Ok(m)
}

/// Relative pivot threshold below which a matrix is declared singular.
const PIVOT_TOL: f64 = 1e-13;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(m: &Matrix) -> Result<Matrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::InvalidDimension(format!("cannot invert a {}x{} matrix", m.rows, m.cols)));
    }
    let n = m.rows;
    solve_many(m, &Matrix::identity(n))
}

/// Solves `a x = b` for a single right-hand side.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let rhs = Matrix::new(b.len(), 1, b.to_vec())?;
    Ok(solve_many(a, &rhs)?.data)
}

fn solve_many(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    let n = a.rows;
    if !a.is_square() || b.rows != n {
        return Err(LinalgError::InvalidDimension("solve: shape mismatch".into()));
    }
    let m = b.cols;
    let mut lhs = a.clone();
    let mut rhs = b.clone();
    let scale = a.max_abs();
    if scale == 0.0 {
        return Err(LinalgError::Singular { col: 0 });
    }
    for col in 0..n {
        let pivot_row = (col..n).max_by(|&p, &q| lhs[(p, col)].abs().total_cmp(&lhs[(q, col)].abs())).unwrap();
        let pivot = lhs[(pivot_row, col)];
        if pivot.abs() <= PIVOT_TOL * scale {
            return Err(LinalgError::Singular { col });
        }
        if pivot_row != col {
            for j in 0..n {
                lhs.data.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..m {
                rhs.data.swap(col * m + j, pivot_row * m + j);
            }
        }
        let inv = 1.0 / pivot;
        for j in 0..n {
            lhs[(col, j)] *= inv;
        }
        for j in 0..m {
            rhs[(col, j)] *= inv;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = lhs[(i, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                lhs[(i, j)] -= f * lhs[(col, j)];
            }
            for j in 0..m {
                rhs[(i, j)] -= f * rhs[(col, j)];
            }
        }
    }
    Ok(rhs)
}

/// `exp(A s)` for the n x n upper shift matrix `A`: entry (i, j) is
/// `s^(j-i) / (j-i)!` on and above the diagonal. The series terminates,
/// so this is exact up to rounding.
pub fn nilpotent_exp(n: usize, s: f64) -> Result<Matrix, LinalgError> {
    if n == 0 {
        return Err(LinalgError::InvalidDimension("nilpotent_exp needs n >= 1".into()));
    }
    if !s.is_finite() {
        return Err(LinalgError::NumericalFailure(format!("non-finite argument {s}")));
    }
    let mut terms = vec![1.0; n];
    for d in 1..n {
        terms[d] = terms[d - 1] * s / d as f64;
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = terms[j - i];
        }
    }
    Ok(m)
}

// Stopping threshold on successive Rayleigh quotients; tighter than the
// 1e-10 accuracy promised to callers.
const NORM2_TOL: f64 = 1e-14;
const NORM2_MAX_ITER: usize = 100_000;

/// Induced Euclidean norm (largest singular value) by power iteration on
/// `M' M`, starting from the all-ones vector.
pub fn induced_norm2(m: &Matrix) -> Result<f64, LinalgError> {
    if !m.is_finite() {
        return Err(LinalgError::NumericalFailure("non-finite matrix".into()));
    }
    if m.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let gram = &m.transpose() * m;
    let n = gram.rows;
    let ones = vec![1.0; n];
    match power_iteration(&gram, &ones)? {
        Some(v) => Ok(v.sqrt()),
        None => {
            // All-ones start lies in the null space; restart from the
            // heaviest column, which has a nonzero image.
            let col = (0..n).max_by(|&a, &b| gram[(a, a)].total_cmp(&gram[(b, b)])).unwrap();
            let mut start = vec![1e-3; n];
            start[col] = 1.0;
            power_iteration(&gram, &start)?
                .map(f64::sqrt)
                .ok_or_else(|| LinalgError::NumericalFailure("power iteration collapsed".into()))
        }
    }
}

/// Dominant eigenvalue of a symmetric positive semidefinite matrix.
/// Returns `None` when the iterate collapses to zero.
fn power_iteration(gram: &Matrix, start: &[f64]) -> Result<Option<f64>, LinalgError> {
    let mut x = start.to_vec();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut rho = 0.0;
    for _ in 0..NORM2_MAX_ITER {
        let y = gram.mul_vec(&x);
        let ny = norm2(&y);
        if ny == 0.0 {
            return Ok(None);
        }
        let next = dot(&x, &y);
        x = y.into_iter().map(|v| v / ny).collect();
        if (next - rho).abs() <= NORM2_TOL * next.abs() {
            // One more Rayleigh quotient on the normalized iterate.
            let y = gram.mul_vec(&x);
            return Ok(Some(dot(&x, &y).max(next)));
        }
        rho = next;
    }
    Err(LinalgError::NumericalFailure(format!("power iteration did not converge in {NORM2_MAX_ITER} iterations")))
}

/// Eigenvalues of a symmetric matrix in ascending order (cyclic Jacobi).
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::InvalidDimension("eigenvalues of a non-square matrix".into()));
    }
    let n = m.rows;
    let mut a = m.symmetrize();
    let frob = a.data.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob {
            let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
            ev.sort_by(f64::total_cmp);
            return Ok(ev);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(LinalgError::NumericalFailure("Jacobi sweeps did not converge".into()))
}

/// Lower-triangular Cholesky factor `L` with `m = L L'`.
pub fn cholesky(m: &Matrix) -> Result<Matrix, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::InvalidDimension("cholesky of a non-square matrix".into()));
    }
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(LinalgError::NotPositiveDefinite { index: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves the Lyapunov equation `A' P + P A = -Q` through its Kronecker
/// form. Intended for the small closed-loop matrices used in gain design.
pub fn solve_lyapunov(a: &Matrix, q: &Matrix) -> Result<Matrix, LinalgError> {
    if !a.is_square() || !q.is_square() || a.rows != q.rows {
        return Err(LinalgError::InvalidDimension("lyapunov: shape mismatch".into()));
    }
    let n = a.rows;
    let nn = n * n;
    let mut big = Matrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                // (A'P)_{ij} = sum_k A_{ki} P_{kj}
                big[(row, k * n + j)] += a[(k, i)];
                // (PA)_{ij} = sum_k P_{ik} A_{kj}
                big[(row, i * n + k)] += a[(k, j)];
            }
        }
    }
    let rhs: Vec<f64> = q.data.iter().map(|v| -v).collect();
    let p = solve(&big, &rhs)?;
    Ok(Matrix::new(n, n, p)?.symmetrize())
}
