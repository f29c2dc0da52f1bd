//! Small dense linear algebra for the estimators.
//!
//! Only what the estimators need: a row-major [`Matrix`], a symmetrized
//! [`SymMatrix`], the symmetric eigendecomposition (closed form for 2×2,
//! cyclic Jacobi above that), SPD inversion and a Cholesky solve for the
//! m×m innovation covariances.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 100;
const GRAM_CLAMP_TOL: f64 = 1e-10;
const SPD_FLOOR: f64 = 1e-12;

/// Relative gap below which the two smallest eigenvalues count as equal.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!("{} values cannot fill a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.iter().flat_map(|r| r.iter().copied()).collect() })
    }

    /// An m×1 matrix holding `v`.
    pub fn column(v: &[f64]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::InvalidArgument(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::InvalidArgument(format!(
                "cannot form AᵀB for {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = rhs.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, b) in dst.iter_mut().zip(b_row) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// The Gram matrix `AᵀA`.
    pub fn gram(&self) -> SymMatrix {
        let g = self.t_matmul(self).expect("gram dimensions always agree");
        SymMatrix::symmetrize(g)
    }

    /// Horizontal concatenation `[self rhs]`.
    pub fn hstack(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(Error::InvalidArgument("hstack row mismatch".into()));
        }
        let cols = self.cols + rhs.cols;
        Ok(Matrix::from_fn(self.rows, cols, |r, c| if c < self.cols { self[(r, c)] } else { rhs[(r, c - self.cols)] }))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols), "shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs).expect("matrix dimensions must agree")
    }
}

/// Dense symmetric matrix, stored symmetrized.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Validates symmetry to `1e-12·max(1, ‖A‖_max)` and stores `(A + Aᵀ)/2`.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols || m.rows == 0 {
            return Err(Error::InvalidArgument(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.rows, m.cols
            )));
        }
        let tol = SYMMETRY_TOL * m.max_abs().max(1.0);
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                let d = (m[(i, j)] - m[(j, i)]).abs();
                if d > tol || d.is_nan() {
                    return Err(Error::InvalidArgument(format!(
                        "matrix is not symmetric at ({i},{j}): difference {d:e}"
                    )));
                }
            }
        }
        Ok(Self::symmetrize(m))
    }

    fn symmetrize(mut m: Matrix) -> Self {
        let n = m.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Self(m)
    }

    pub fn zeros(n: usize) -> Self {
        Self(Matrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    pub fn scalar(v: f64) -> Self {
        Self(Matrix { rows: 1, cols: 1, data: vec![v] })
    }

    pub fn from_diag(d: &[f64]) -> Self {
        let mut m = Matrix::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        Self(self.0.scale(s))
    }

    pub fn add(&self, rhs: &SymMatrix) -> SymMatrix {
        Self(&self.0 + &rhs.0)
    }

    pub fn sub(&self, rhs: &SymMatrix) -> SymMatrix {
        Self(&self.0 - &rhs.0)
    }

    /// `self + s·I`.
    pub fn shift(&self, s: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.rows {
            m[(i, i)] += s;
        }
        Self(m)
    }

    /// Leading `k×k` principal block.
    pub fn leading_block(&self, k: usize) -> SymMatrix {
        Self(Matrix::from_fn(k, k, |r, c| self.0[(r, c)]))
    }

    /// Symmetrized `B·self·Bᵀ`.
    pub fn congruence(&self, b: &Matrix) -> SymMatrix {
        let left = b * &self.0;
        Self::symmetrize(left.matmul(&b.transpose()).expect("congruence dimensions"))
    }

    pub fn frobenius(&self) -> f64 {
        self.0.frobenius()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    /// `x ≼ y` in the Loewner order up to a relative tolerance: `y − x` has no
    /// eigenvalue below `−tol·max(‖x‖_F, ‖y‖_F)`.
    pub fn loewner_le(&self, other: &SymMatrix, tol: f64) -> Result<bool> {
        let diff = other.sub(self);
        let scale = self.frobenius().max(other.frobenius());
        let eig = eig_sym(&diff)?;
        Ok(eig.values.iter().all(|&v| v >= -tol * scale))
    }
}

/// Eigenvalues sorted descending with their orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: Matrix,
    /// Number of tiny negative eigenvalues clamped to zero.
    pub clamped: usize,
}

impl EigenPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn smallest(&self) -> f64 {
        *self.values.last().expect("non-empty spectrum")
    }

    /// Gap between the two smallest eigenvalues.
    pub fn smallest_gap(&self) -> f64 {
        let n = self.values.len();
        if n < 2 {
            return f64::INFINITY;
        }
        self.values[n - 2] - self.values[n - 1]
    }

    /// The two smallest eigenvalues agree to [`DEGENERACY_TOL`] relative to the spectral scale.
    pub fn smallest_is_degenerate(&self) -> bool {
        let scale = self.values.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        self.smallest_gap() <= DEGENERACY_TOL * scale
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        self.vectors.col(j)
    }

    /// `V·Λ·Vᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |r, c| (0..n).map(|k| self.vectors[(r, k)] * self.values[k] * self.vectors[(c, k)]).sum())
    }
}

/// Symmetric eigendecomposition with descending eigenvalues.
///
/// Each eigenvector is signed so its largest-magnitude entry is positive
/// (lowest index wins ties). Eigenvalues in `(−1e-10·‖A‖_F, 0)` are clamped
/// to zero and counted in [`EigenPair::clamped`].
pub fn eig_sym(a: &SymMatrix) -> Result<EigenPair> {
    if !a.0.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    match a.dim() {
        1 => finish(vec![a.get(0, 0)], Matrix::identity(1), a.frobenius()),
        2 => eig_sym_2x2(a),
        _ => eig_sym_jacobi(a),
    }
}

/// Closed-form solution for 2×2 input.
pub fn eig_sym_2x2(a: &SymMatrix) -> Result<EigenPair> {
    if a.dim() != 2 {
        return Err(Error::InvalidArgument("closed form requires a 2x2 matrix".into()));
    }
    let (p, b, q) = (a.get(0, 0), a.get(0, 1), a.get(1, 1));
    if b == 0.0 {
        let (values, vectors) = if p >= q {
            (vec![p, q], Matrix::identity(2))
        } else {
            (vec![q, p], Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]])?)
        };
        return finish(values, vectors, a.frobenius());
    }
    let half = 0.5 * (p - q);
    let d = half.hypot(b);
    let mean = 0.5 * (p + q);
    let (l1, l2) = (mean + d, mean - d);
    // pick the better-conditioned row of (A − λ₁I)v = 0
    let (x, y) = if half >= 0.0 { (half + d, b) } else { (b, d - half) };
    let norm = x.hypot(y);
    let (x, y) = (x / norm, y / norm);
    let vectors = Matrix::from_rows(&[&[x, -y], &[y, x]])?;
    finish(vec![l1, l2], vectors, a.frobenius())
}

/// Cyclic Jacobi rotations; converges when the off-diagonal norm drops below
/// `1e-14·‖A‖_F`, fails after 100 sweeps.
pub fn eig_sym_jacobi(a: &SymMatrix) -> Result<EigenPair> {
    if !a.0.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let n = a.dim();
    let norm = a.frobenius();
    let mut m = a.0.clone();
    let mut v = Matrix::identity(n);
    let tol = JACOBI_TOL * norm;

    let off = |m: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * m[(i, j)] * m[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut converged = off(&m) <= tol;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NumericalFailure {
                batch: 0,
                detail: format!("Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + theta.hypot(1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / t.hypot(1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        converged = off(&m) <= tol;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    finish(values, vectors, norm)
}

fn finish(mut values: Vec<f64>, mut vectors: Matrix, norm: f64) -> Result<EigenPair> {
    let n = values.len();
    let mut clamped = 0;
    for v in values.iter_mut() {
        if *v < 0.0 && *v > -GRAM_CLAMP_TOL * norm {
            *v = 0.0;
            clamped += 1;
        }
    }
    for c in 0..n {
        let mut lead = 0;
        for r in 1..n {
            if vectors[(r, c)].abs() > vectors[(lead, c)].abs() {
                lead = r;
            }
        }
        if vectors[(lead, c)] < 0.0 {
            for r in 0..n {
                vectors[(r, c)] = -vectors[(r, c)];
            }
        }
    }
    Ok(EigenPair { values, vectors, clamped })
}

/// Inverse of a symmetric positive definite matrix.
///
/// Fails with [`Error::SingularMatrix`] when the smallest eigenvalue is not
/// above `1e-12·‖A‖_F`.
pub fn invert_spd(a: &SymMatrix) -> Result<SymMatrix> {
    if a.dim() == 1 {
        let v = a.get(0, 0);
        if !v.is_finite() {
            return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
        }
        let floor = SPD_FLOOR * v.abs();
        if v <= floor {
            return Err(Error::SingularMatrix { eigenvalue: v, floor });
        }
        return Ok(SymMatrix::scalar(1.0 / v));
    }
    let eig = eig_sym(a)?;
    let floor = SPD_FLOOR * a.frobenius();
    let smallest = eig.smallest();
    if smallest <= floor {
        return Err(Error::SingularMatrix { eigenvalue: smallest, floor });
    }
    let n = a.dim();
    let inv =
        Matrix::from_fn(n, n, |r, c| (0..n).map(|k| eig.vectors[(r, k)] * eig.vectors[(c, k)] / eig.values[k]).sum());
    Ok(SymMatrix::symmetrize(inv))
}

/// Lower Cholesky factor of an SPD matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn new(a: &SymMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return Err(Error::SingularMatrix { eigenvalue: d, floor: 0.0 });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    /// Solves `A·X = B` column by column.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.l.rows;
        if b.rows != n {
            return Err(Error::InvalidArgument("right-hand side row mismatch".into()));
        }
        let mut x = b.clone();
        for c in 0..b.cols {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / self.l[(i, i)];
            }
        }
        Ok(x)
    }
}
