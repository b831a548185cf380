//! Minimal dense linear algebra: row-major matrices, symmetric
//! positive-definite solves, and the ridge-regularized factorization that
//! stands in for every matrix inverse in the training formulas.
//!
//! The weight-structure matrix assembled from a kernel bank is always rank
//! deficient (each shared-weight column equals the sum of the matching
//! task-weight columns), so plain inversion is never safe. All solves go
//! through a Cholesky factorization of `A + eps*I` with a caller-chosen
//! ridge `eps`.

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Wraps a row-major buffer. Fails if the length does not match.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("matrix rows"));
        }
        let cols = rows[0].len();
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
        DenseMatrix::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if !self.is_square() {
            return false;
        }
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.at(i, j) - self.at(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.at(i, i)).sum()
    }

    /// Frobenius inner product `sum_ij A_ij * B_ij`.
    pub fn frob_dot(&self, other: &DenseMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        Ok(dot(&self.data, &other.data))
    }

    pub fn frob_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.add_at(i, j, a * other.at(k, j));
                }
            }
        }
        Ok(out)
    }

    pub fn transposed(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.at(i, j));
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: f64, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `x' M y`.
pub fn quadratic_form(m: &DenseMatrix, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != m.rows() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: x.len(),
        });
    }
    let my = m.matvec(y)?;
    Ok(dot(x, &my))
}

/// Cholesky factorization of `A + ridge*I` for a symmetric matrix `A`.
///
/// The pivot test is relative to the largest diagonal entry, so a matrix
/// with a numerically zero eigenvalue is rejected rather than factored into
/// garbage; adding any meaningful ridge makes the factorization succeed.
#[derive(Debug, Clone)]
pub struct SymmetricFactorization {
    dim: usize,
    ridge: f64,
    lower: Vec<f64>,
}

impl SymmetricFactorization {
    pub fn new(a: &DenseMatrix, ridge: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                expected: a.rows(),
                got: a.cols(),
            });
        }
        a.validate_finite("factorization input")?;
        if !ridge.is_finite() || ridge < 0.0 {
            return Err(Error::NonFinite("ridge"));
        }
        let n = a.rows();
        let mut work = a.data().to_vec();
        for i in 0..n {
            work[i * n + i] += ridge;
        }
        let max_diag = (0..n).map(|i| work[i * n + i].abs()).fold(0.0, f64::max);
        let pivot_floor = (n as f64) * f64::EPSILON * max_diag;

        // In-place lower Cholesky.
        for j in 0..n {
            let mut d = work[j * n + j];
            for k in 0..j {
                d -= work[j * n + k] * work[j * n + k];
            }
            if !(d > pivot_floor) {
                return Err(Error::NotPositiveDefinite { index: j, pivot: d });
            }
            let l = d.sqrt();
            work[j * n + j] = l;
            for i in (j + 1)..n {
                let mut s = work[i * n + j];
                for k in 0..j {
                    s -= work[i * n + k] * work[j * n + k];
                }
                work[i * n + j] = s / l;
            }
            for k in (j + 1)..n {
                work[j * n + k] = 0.0;
            }
        }
        Ok(SymmetricFactorization {
            dim: n,
            ridge,
            lower: work,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Solves `(A + ridge*I) x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        if rhs.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: rhs.len(),
            });
        }
        if !rhs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("rhs"));
        }
        let l = &self.lower;
        let mut x = rhs.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[i * n + k] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * x[k];
            }
            x[i] = s / l[i * n + i];
        }
        Ok(x)
    }
}

/// Solves `(A + ridge*I) x = rhs` against a prebuilt factorization.
pub fn solve_spd(fact: &SymmetricFactorization, rhs: &[f64]) -> Result<Vec<f64>> {
    fact.solve(rhs)
}
