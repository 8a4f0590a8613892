//! Correlation structure of the driving Brownian motions:
//! `E(B^i_s B^k_t) = R_{i,k} (s ∧ t)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Pivot floor used when factorising a correlation matrix.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// How a correlation matrix was built. Carried into ensemble provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CorrelationKind<T> {
    Identity,
    Toeplitz { rho: T },
    BlockDiagonal { sizes: Vec<usize> },
    Tridiagonal { a: T },
    Custom,
}

impl<T: fmt::Display> fmt::Display for CorrelationKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationKind::Identity => write!(f, "identity"),
            CorrelationKind::Toeplitz { rho } => write!(f, "toeplitz(rho={rho})"),
            CorrelationKind::BlockDiagonal { sizes } => write!(f, "block_diagonal({sizes:?})"),
            CorrelationKind::Tridiagonal { a } => write!(f, "tridiagonal(a={a})"),
            CorrelationKind::Custom => write!(f, "custom"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix<T> {
    entries: Matrix<T>,
    kind: CorrelationKind<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceStats<T> {
    /// `(1/n) Σ_{i,k} |R_{i,k}|`
    pub abs_sum: T,
    /// Largest absolute eigenvalue.
    pub op_norm: T,
}

/// Lower-triangular `C` with `C Cᵀ = R`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor<T> {
    lower: Matrix<T>,
    identity: bool,
}

impl<T: Scalar> CorrelationMatrix<T> {
    pub fn identity(n: usize) -> Result<Self> {
        check_size(n)?;
        Ok(Self { entries: Matrix::identity(n), kind: CorrelationKind::Identity })
    }

    /// `R_{i,k} = ρ^{|i−k|}`, the covariance of a stationary AR(1) sequence.
    pub fn toeplitz(n: usize, rho: T) -> Result<Self> {
        check_size(n)?;
        if !(rho.abs() < T::one()) {
            return Err(invalid("rho", format!("rho must lie in (-1, 1), got {rho}")));
        }
        let powers: Vec<T> = (0..n).map(|d| rho.powi(d as i32)).collect();
        let entries = Matrix::from_fn(n, n, |i, k| powers[i.abs_diff(k)]);
        Ok(Self { entries, kind: CorrelationKind::Toeplitz { rho } })
    }

    /// Correlation induced by `dB^i = √a dW^i + √(1−a) dW^{i+1}` with
    /// independent `W`: `R_{i,i±1} = √(a(1−a))`, zero beyond the first band.
    pub fn tridiagonal_factor(n: usize, a: T) -> Result<Self> {
        check_size(n)?;
        if !(a >= T::zero() && a <= T::one()) {
            return Err(invalid("a", format!("a must lie in [0, 1], got {a}")));
        }
        let off = (a * (T::one() - a)).sqrt();
        let entries = Matrix::from_fn(n, n, |i, k| match i.abs_diff(k) {
            0 => T::one(),
            1 => off,
            _ => T::zero(),
        });
        Ok(Self { entries, kind: CorrelationKind::Tridiagonal { a } })
    }

    /// Block-diagonal assembly; the spectrum is the union of block spectra.
    pub fn block_diagonal(blocks: &[CorrelationMatrix<T>]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(invalid("blocks", "need at least one block"));
        }
        let n: usize = blocks.iter().map(CorrelationMatrix::size).sum();
        let mut entries = Matrix::zeros(n, n);
        let mut offset = 0;
        for block in blocks {
            let s = block.size();
            for i in 0..s {
                for k in 0..s {
                    entries[(offset + i, offset + k)] = block.entries[(i, k)];
                }
            }
            offset += s;
        }
        let sizes = blocks.iter().map(CorrelationMatrix::size).collect();
        Ok(Self { entries, kind: CorrelationKind::BlockDiagonal { sizes } })
    }

    /// `R_{i,k} = ρ` for every `i ≠ k`; positive semidefinite for
    /// `−1/(n−1) ≤ ρ ≤ 1`.
    pub fn equicorrelated(n: usize, rho: T) -> Result<Self> {
        let entries = Matrix::from_fn(n, n, |i, k| if i == k { T::one() } else { rho });
        Self::custom(entries)
    }

    /// Validates an arbitrary matrix: symmetric, unit diagonal, entries in
    /// `[−1, 1]` and positive semidefinite up to round-off.
    pub fn custom(entries: Matrix<T>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::DimensionMismatch { expected: entries.rows(), got: entries.cols() });
        }
        let n = entries.rows();
        check_size(n)?;
        if !entries.all_finite() {
            return Err(invalid("correlation", "entries must be finite"));
        }
        let tol = T::of(1e-12);
        if !entries.is_symmetric(tol) {
            return Err(invalid("correlation", "matrix is not symmetric"));
        }
        for i in 0..n {
            if (entries[(i, i)] - T::one()).abs() > tol {
                return Err(invalid("correlation", format!("diagonal entry {i} is not 1")));
            }
            if entries.row(i).iter().any(|v| v.abs() > T::one() + tol) {
                return Err(invalid("correlation", format!("row {i} has an entry outside [-1, 1]")));
            }
        }
        let smallest = entries.symmetric_eigenvalues()?[0];
        if smallest < -T::of(PIVOT_TOLERANCE) * T::of_usize(n) {
            return Err(invalid(
                "correlation",
                format!("matrix is not positive semidefinite (eigenvalue {smallest:e})"),
            ));
        }
        Ok(Self { entries, kind: CorrelationKind::Custom })
    }

    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn entries(&self) -> &Matrix<T> {
        &self.entries
    }

    pub fn kind(&self) -> &CorrelationKind<T> {
        &self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> T {
        self.entries[(i, k)]
    }

    pub fn cholesky(&self) -> Result<CholeskyFactor<T>> {
        let lower = self.entries.cholesky(T::of(PIVOT_TOLERANCE))?;
        let identity = lower == Matrix::identity(self.size());
        Ok(CholeskyFactor { lower, identity })
    }

    /// `(1/n) Σ_{i≠k} |R_{i,k}|`, the dependence inflation of variance terms.
    pub fn off_diagonal_abs_mean(&self) -> T {
        let n = self.size();
        let mut s = T::zero();
        for i in 0..n {
            for (k, v) in self.entries.row(i).iter().enumerate() {
                if k != i {
                    s += v.abs();
                }
            }
        }
        s / T::of_usize(n)
    }

    /// `(1/n) Σ_{i≠k} R_{i,k}` without absolute values.
    pub fn off_diagonal_mean(&self) -> T {
        let n = self.size();
        let total: T = self.entries.as_slice().iter().copied().sum();
        (total - T::of_usize(n)) / T::of_usize(n)
    }

    pub fn dependence_stats(&self) -> Result<DependenceStats<T>> {
        let n = T::of_usize(self.size());
        let abs_sum = self.entries.as_slice().iter().map(|v| v.abs()).sum::<T>() / n;
        let eig = self.entries.symmetric_eigenvalues()?;
        let op_norm = eig.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        Ok(DependenceStats { abs_sum, op_norm })
    }
}

impl<T: Scalar> CholeskyFactor<T> {
    pub fn size(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        self.lower.matmul(&self.lower.transpose()).expect("square factor")
    }

    /// `out = C z`.
    pub fn apply(&self, z: &[T], out: &mut [T]) {
        let n = self.size();
        assert!(z.len() == n && out.len() == n);
        if self.identity {
            out.copy_from_slice(z);
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.lower.row(i)[..=i];
            *o = row.iter().zip(z).map(|(&c, &zz)| c * zz).sum();
        }
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        Err(invalid("n", "correlation matrix needs at least one row"))
    } else {
        Ok(())
    }
}
