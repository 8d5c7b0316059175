//! Small dense linear algebra: a row-major matrix, a cyclic Jacobi symmetric
//! eigensolver and a one-sided Jacobi SVD used for minimum-norm least squares.
//!
//! The problems in this crate are tiny (at most a few hundred rows and a few
//! dozen columns), so plain O(n³) Jacobi methods are accurate and fast enough.

mod vec3;

use std::ops::{Index, IndexMut};

pub use vec3::{Mat3, Vec3};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from a row-major buffer.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, o: &Self) -> Result<Self> {
        if self.cols != o.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: o.rows,
            });
        }
        let mut r = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..o.cols {
                    r[(i, j)] += a * o[(k, j)];
                }
            }
        }
        Ok(r)
    }

    pub fn matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: v.len(),
            });
        }
        Ok(self.rows_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn tr_matvec(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                got: v.len(),
            });
        }
        let mut out = vec![T::zero(); self.cols];
        for (r, &vi) in self.rows_iter().zip(v) {
            for (o, &a) in out.iter_mut().zip(r) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// New matrix with the listed rows, in the listed order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// New matrix with columns `start..end`.
    pub fn columns(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] - o[(i, j)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Symmetric eigendecomposition, unsorted: `(eigenvalues, eigenvectors as columns)`.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
    pub sweeps: usize,
}

fn jacobi_tolerance<T: Real>() -> T {
    // 1e-13 in f64; a few ulps above machine precision for f32.
    T::lit(1e-13).max(T::epsilon() * T::lit(4.0))
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Iterates until the off-diagonal Frobenius norm is at most `1e-13·‖A‖_F`.
pub fn sym_eigen<T: Real>(a: &Matrix<T>) -> Result<SymEigen<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius();
    let target = jacobi_tolerance::<T>() * scale;
    let off = |m: &Matrix<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)] * m[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    const MAX_SWEEPS: usize = 100;
    while off(&m) > target {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NonConvergence {
                iterations: sweeps,
                residual: off(&m).as_f64(),
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (T::lit(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Ok(SymEigen {
        values: (0..n).map(|i| m[(i, i)]).collect(),
        vectors: v,
        sweeps,
    })
}

/// Thin singular value decomposition `A = U·diag(σ)·Vᵀ` of a tall matrix
/// (rows ≥ cols), computed by one-sided Jacobi rotations.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    /// Left singular vectors (rows × cols); columns for zero singular values are zero.
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

pub fn svd_tall<T: Real>(a: &Matrix<T>) -> Result<Svd<T>> {
    let (n, p) = (a.nrows(), a.ncols());
    if n < p {
        return Err(Error::invalid(format!("svd_tall needs rows >= cols, got {n}x{p}")));
    }
    if !a.is_finite() {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let mut u = a.clone();
    let mut v = Matrix::identity(p);
    let eps = T::epsilon();
    const MAX_SWEEPS: usize = 80;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..p {
            for j in i + 1..p {
                let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                for k in 0..n {
                    let (ui, uj) = (u[(k, i)], u[(k, j)]);
                    alpha += ui * ui;
                    beta += uj * uj;
                    gamma += ui * uj;
                }
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let (ui, uj) = (u[(k, i)], u[(k, j)]);
                    u[(k, i)] = c * ui - s * uj;
                    u[(k, j)] = s * ui + c * uj;
                }
                for k in 0..p {
                    let (vi, vj) = (v[(k, i)], v[(k, j)]);
                    v[(k, i)] = c * vi - s * vj;
                    v[(k, j)] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("one-sided Jacobi SVD did not converge".into()));
    }
    let mut sigma = Vec::with_capacity(p);
    for j in 0..p {
        let s = norm(&u.col(j));
        sigma.push(s);
        for k in 0..n {
            u[(k, j)] = if s > T::zero() { u[(k, j)] / s } else { T::zero() };
        }
    }
    Ok(Svd { u, sigma, v })
}

/// Minimum-norm least-squares solution of `A·x ≈ b`.
#[derive(Debug, Clone)]
pub struct LstsqSolution<T> {
    pub x: Vec<T>,
    pub rank: usize,
}

/// Solves `min ‖A·x − b‖` with the smallest-norm `x`, through the SVD.
/// Singular values below `max(rows, cols)·ε·σ_max` are treated as zero.
pub fn lstsq<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<LstsqSolution<T>> {
    let (n, p) = (a.nrows(), a.ncols());
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("right-hand side has non-finite entries"));
    }
    let tall = n >= p;
    let svd = if tall { svd_tall(a)? } else { svd_tall(&a.transpose())? };
    let smax = svd.sigma.iter().fold(T::zero(), |m, &s| m.max(s));
    let cutoff = smax * T::epsilon() * T::from_count(n.max(p));
    let mut x = vec![T::zero(); p];
    let mut rank = 0;
    for (j, &s) in svd.sigma.iter().enumerate() {
        if s <= cutoff || s == T::zero() {
            continue;
        }
        rank += 1;
        if tall {
            // x += v_j (u_jᵀ b) / σ_j
            let coef = dot(&svd.u.col(j), b) / s;
            for (k, xk) in x.iter_mut().enumerate() {
                *xk += svd.v[(k, j)] * coef;
            }
        } else {
            // Aᵀ = U Σ Vᵀ, so x += u_j (v_jᵀ b) / σ_j
            let coef = dot(&svd.v.col(j), b) / s;
            for (k, xk) in x.iter_mut().enumerate() {
                *xk += svd.u[(k, j)] * coef;
            }
        }
    }
    Ok(LstsqSolution { x, rank })
}
