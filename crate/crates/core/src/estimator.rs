//! Projection least squares on `S_m = span{φ_1, …, φ_m}`.
//!
//! All time integrals are left-point sums on the observation grid:
//! `∫_0^T f(X_s) ds ≈ Σ_k f(X_{kΔ}) Δ` and
//! `∫_0^T f(X_s) dX_s ≈ Σ_k f(X_{kΔ}) (X_{(k+1)Δ} − X_{kΔ})`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, DEFAULT_L_GRID};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_solve, Matrix};
use crate::scalar::Scalar;
use crate::simulate::PathEnsemble;

/// Pointwise function passed to the estimator (e.g. a known `σ`).
pub type Weight<'a, T> = &'a (dyn Fn(T) -> T + Sync);

/// Path-and-time sums needed by every fit up to dimension `m`. Lower
/// dimensions are leading blocks, so one pass serves a whole nested family.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments<T> {
    basis: Basis<T>,
    m: usize,
    psi: Matrix<T>,
    psi_sigma: Option<Matrix<T>>,
    target: Vec<T>,
    n_paths: usize,
    horizon: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrices<T> {
    pub m: usize,
    /// `Ψ̂_m = (⟨φ_j, φ_ℓ⟩_N)`
    pub psi_hat: Matrix<T>,
    /// `Ψ̂_{m,σ} = (⟨σφ_j, σφ_ℓ⟩_N)`
    pub psi_hat_sigma: Option<Matrix<T>>,
    pub min_eigenvalue: T,
    pub max_eigenvalue: T,
    /// `‖Ψ̂_m^{-1}‖_op = 1/λ_min`, infinite when `Ψ̂_m` is singular.
    pub inv_op_norm: T,
}

impl<T: Scalar> GramMatrices<T> {
    pub fn condition_number(&self) -> T {
        if self.min_eigenvalue > T::zero() {
            self.max_eigenvalue / self.min_eigenvalue
        } else {
            T::infinity()
        }
    }
}

struct PathSums<T> {
    psi: Vec<T>,
    psi_sigma: Vec<T>,
    target: Vec<T>,
}

impl<T: Scalar> EmpiricalMoments<T> {
    pub fn compute(ens: &PathEnsemble<T>, basis: &Basis<T>, m: usize, sigma: Option<Weight<'_, T>>) -> Result<Self> {
        if m == 0 || m > basis.m_max() {
            return Err(Error::IndexOutOfRange { index: m, max: basis.m_max() });
        }
        let per_path: Vec<PathSums<T>> = (0..ens.n_paths())
            .into_par_iter()
            .map(|i| {
                let path = ens.path(i);
                let mut psi = vec![T::zero(); m * m];
                let mut psi_sigma = vec![T::zero(); if sigma.is_some() { m * m } else { 0 }];
                let mut target = vec![T::zero(); m];
                let mut phi = vec![T::zero(); m];
                for w in path.windows(2) {
                    let (x, dx) = (w[0], w[1] - w[0]);
                    basis.fill(x, &mut phi);
                    for j in 0..m {
                        target[j] += phi[j] * dx;
                        let pj = phi[j];
                        for l in j..m {
                            psi[j * m + l] += pj * phi[l];
                        }
                    }
                    if let Some(s) = sigma {
                        let s2 = s(x) * s(x);
                        for j in 0..m {
                            let pj = phi[j] * s2;
                            for l in j..m {
                                psi_sigma[j * m + l] += pj * phi[l];
                            }
                        }
                    }
                }
                PathSums { psi, psi_sigma, target }
            })
            .collect();

        let mut psi = vec![T::zero(); m * m];
        let mut psi_sigma = vec![T::zero(); if sigma.is_some() { m * m } else { 0 }];
        let mut target = vec![T::zero(); m];
        for p in &per_path {
            add_into(&mut psi, &p.psi);
            add_into(&mut psi_sigma, &p.psi_sigma);
            add_into(&mut target, &p.target);
        }
        let nt = ens.total_time();
        let time_weight = ens.dt() / nt;
        let psi = symmetric_from_upper(m, &psi, time_weight);
        let psi_sigma = sigma.map(|_| symmetric_from_upper(m, &psi_sigma, time_weight));
        target.iter_mut().for_each(|t| *t /= nt);
        Ok(Self { basis: *basis, m, psi, psi_sigma, target, n_paths: ens.n_paths(), horizon: ens.horizon() })
    }

    pub fn basis(&self) -> &Basis<T> {
        &self.basis
    }

    pub fn max_dim(&self) -> usize {
        self.m
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn total_time(&self) -> T {
        self.horizon * T::of_usize(self.n_paths)
    }

    fn check(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.m {
            Err(Error::IndexOutOfRange { index: m, max: self.m })
        } else {
            Ok(())
        }
    }

    pub fn gram(&self, m: usize) -> Result<GramMatrices<T>> {
        self.check(m)?;
        let psi_hat = self.psi.leading(m);
        let eig = psi_hat.symmetric_eigenvalues()?;
        let (lo, hi) = (eig[0], eig[m - 1]);
        let inv_op_norm = if lo > T::zero() { lo.recip() } else { T::infinity() };
        Ok(GramMatrices {
            m,
            psi_hat_sigma: self.psi_sigma.as_ref().map(|s| s.leading(m)),
            psi_hat,
            min_eigenvalue: lo,
            max_eigenvalue: hi,
            inv_op_norm,
        })
    }

    /// `X̂_m`
    pub fn target(&self, m: usize) -> Result<Vec<T>> {
        self.check(m)?;
        Ok(self.target[..m].to_vec())
    }
}

fn add_into<T: Scalar>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn symmetric_from_upper<T: Scalar>(m: usize, upper: &[T], scale: T) -> Matrix<T> {
    Matrix::from_fn(m, m, |j, l| {
        let (a, b) = if j <= l { (j, l) } else { (l, j) };
        upper[a * m + b] * scale
    })
}

/// `Ψ̂_m` (and `Ψ̂_{m,σ}` when `sigma` is given).
pub fn empirical_gram<T: Scalar>(
    ens: &PathEnsemble<T>,
    basis: &Basis<T>,
    m: usize,
    sigma: Option<Weight<'_, T>>,
) -> Result<GramMatrices<T>> {
    EmpiricalMoments::compute(ens, basis, m, sigma)?.gram(m)
}

/// `X̂_m[j] = (1/NT) Σ_i Σ_k φ_j(X^i_k)(X^i_{k+1} − X^i_k)`.
pub fn empirical_target<T: Scalar>(ens: &PathEnsemble<T>, basis: &Basis<T>, m: usize) -> Result<Vec<T>> {
    EmpiricalMoments::compute(ens, basis, m, None)?.target(m)
}

/// Stability gate deciding whether `Ψ̂_m` is trusted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GateKind {
    /// `m ‖Ψ̂_m^{-1}‖_op^{1/4} ≤ NT`
    Empirical,
    /// `L(m)(‖Ψ̂_m^{-1}‖_op ∨ 1) ≤ 𝔠_T(p) NT / log(NT)`,
    /// `𝔠_T(p) = 1/(256 T (1 + p/2))`.
    Truncation { p: f64 },
    /// `[𝔠_φ² m (‖Ψ̂_m^{-1}‖_op ∨ 1)]² ≤ 𝔡_T(p) NT / log(NT)`,
    /// `𝔡_T(p) = 1/(512 𝔠_φ⁴ T (1 + p/2))`.
    Collection { p: f64 },
}

pub const DEFAULT_P: f64 = 12.0;

/// A gate together with a multiplier on its threshold (1 is the nominal
/// gate; 0 rejects everything).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateSpec {
    pub kind: GateKind,
    pub threshold_scale: f64,
}

impl Default for GateSpec {
    fn default() -> Self {
        Self::new(GateKind::Empirical)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateOutcome<T> {
    pub value: T,
    pub threshold: T,
    pub passed: bool,
}

impl GateSpec {
    pub fn new(kind: GateKind) -> Self {
        Self { kind, threshold_scale: 1.0 }
    }

    pub fn truncation(p: f64) -> Self {
        Self::new(GateKind::Truncation { p })
    }

    pub fn collection(p: f64) -> Self {
        Self::new(GateKind::Collection { p })
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.threshold_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            GateKind::Truncation { p } | GateKind::Collection { p } if !(p >= 12.0) => {
                Err(invalid("p", format!("must be at least 12, got {p}")))
            }
            _ if !(self.threshold_scale >= 0.0) => Err(invalid("threshold_scale", "must be nonnegative")),
            _ => Ok(()),
        }
    }

    pub fn evaluate<T: Scalar>(
        &self,
        m: usize,
        inv_op_norm: T,
        basis: &Basis<T>,
        n_paths: usize,
        horizon: T,
    ) -> Result<GateOutcome<T>> {
        self.validate()?;
        let nt = horizon * T::of_usize(n_paths);
        let mf = T::of_usize(m);
        let scale = T::of(self.threshold_scale);
        let (value, threshold) = match self.kind {
            GateKind::Empirical => (mf * inv_op_norm.powf(T::of(0.25)), nt),
            GateKind::Truncation { p } => {
                let c_t = T::one() / (T::of(256.0) * horizon * T::of(1.0 + p / 2.0));
                let l = basis.l_of_m(m, DEFAULT_L_GRID)?;
                (l * inv_op_norm.max(T::one()), c_t * nt / nt.ln())
            }
            GateKind::Collection { p } => {
                let c_phi2 = basis.sup_norm_constant(DEFAULT_L_GRID)?;
                let d_t = T::one() / (T::of(512.0) * c_phi2 * c_phi2 * horizon * T::of(1.0 + p / 2.0));
                let v = c_phi2 * mf * inv_op_norm.max(T::one());
                (v * v, d_t * nt / nt.ln())
            }
        };
        let threshold = threshold * scale;
        Ok(GateOutcome { value, threshold, passed: value.is_finite() && value <= threshold })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics<T> {
    pub condition_number: T,
    pub inv_op_norm: T,
    pub gate_value: T,
    pub gate_threshold: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftEstimate<T> {
    pub basis: Basis<T>,
    pub m: usize,
    pub theta: Vec<T>,
    /// Set when the gate rejected `Ψ̂_m`; `theta` is then zero.
    pub truncated: bool,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Scalar> DriftEstimate<T> {
    /// `b̂_m(x) = Σ_j θ̂_j φ_j(x)`
    pub fn eval(&self, x: T) -> T {
        self.basis.combine(&self.theta, x)
    }
}

/// Solves `Ψ̂_m θ = X̂_m` without any gate.
pub fn solve_coefficients<T: Scalar>(gram: &GramMatrices<T>, target: &[T]) -> Result<Vec<T>> {
    let chol = gram
        .psi_hat
        .cholesky(T::zero())
        .map_err(|_| Error::SingularGram { m: gram.m })?;
    let theta = cholesky_solve(&chol, target);
    if theta.iter().all(|v| v.is_finite()) {
        Ok(theta)
    } else {
        Err(Error::SingularGram { m: gram.m })
    }
}

/// Fit at dimension `m` from precomputed moments, applying the gate:
/// a rejected gate yields the zero function with `truncated = true`.
pub fn fit_from_moments<T: Scalar>(moments: &EmpiricalMoments<T>, m: usize, gate: &GateSpec) -> Result<DriftEstimate<T>> {
    let gram = moments.gram(m)?;
    let outcome = gate.evaluate(m, gram.inv_op_norm, moments.basis(), moments.n_paths(), moments.horizon())?;
    let diagnostics = Diagnostics {
        condition_number: gram.condition_number(),
        inv_op_norm: gram.inv_op_norm,
        gate_value: outcome.value,
        gate_threshold: outcome.threshold,
    };
    let basis = *moments.basis();
    if !outcome.passed {
        return Ok(DriftEstimate { basis, m, theta: vec![T::zero(); m], truncated: true, diagnostics });
    }
    let theta = solve_coefficients(&gram, &moments.target(m)?)?;
    Ok(DriftEstimate { basis, m, theta, truncated: false, diagnostics })
}

pub fn fit_fixed_m<T: Scalar>(
    ens: &PathEnsemble<T>,
    basis: &Basis<T>,
    m: usize,
    sigma: Option<Weight<'_, T>>,
    gate: &GateSpec,
) -> Result<DriftEstimate<T>> {
    let moments = EmpiricalMoments::compute(ens, basis, m, sigma)?;
    fit_from_moments(&moments, m, gate)
}

/// `‖τ‖²_N = (1/NT) Σ_i Σ_k τ(X^i_k)² Δ`
pub fn empirical_norm_sq_fn<T: Scalar>(ens: &PathEnsemble<T>, f: impl Fn(T) -> T + Sync) -> T {
    let sums: Vec<T> = (0..ens.n_paths())
        .into_par_iter()
        .map(|i| {
            let p = ens.path(i);
            p[..p.len() - 1].iter().map(|&x| f(x) * f(x)).sum()
        })
        .collect();
    sums.into_iter().sum::<T>() * ens.dt() / ens.total_time()
}

/// `‖Σ_j θ_j φ_j‖²_N`
pub fn empirical_norm_sq<T: Scalar>(ens: &PathEnsemble<T>, basis: &Basis<T>, theta: &[T]) -> T {
    empirical_norm_sq_fn(ens, |x| basis.combine(theta, x))
}

/// Least-squares contrast
/// `γ_N(τ) = (1/NT) Σ_i (Σ_k τ(X^i_k)² Δ − 2 Σ_k τ(X^i_k)(X^i_{k+1} − X^i_k))`.
pub fn contrast<T: Scalar>(ens: &PathEnsemble<T>, tau: impl Fn(T) -> T + Sync) -> T {
    let dt = ens.dt();
    let two = T::of(2.0);
    let sums: Vec<T> = (0..ens.n_paths())
        .into_par_iter()
        .map(|i| {
            ens.path(i)
                .windows(2)
                .map(|w| {
                    let v = tau(w[0]);
                    v * v * dt - two * v * (w[1] - w[0])
                })
                .sum()
        })
        .collect();
    sums.into_iter().sum::<T>() / ens.total_time()
}

/// Martingale part of the target,
/// `Ê_m[j] = (1/NT) Σ_i Σ_k σ(X^i_k) φ_j(X^i_k) ΔB^i_k`.
pub fn noise_projection<T: Scalar>(
    ens: &PathEnsemble<T>,
    increments: &Matrix<T>,
    basis: &Basis<T>,
    m: usize,
    sigma: Weight<'_, T>,
) -> Result<Vec<T>> {
    if increments.rows() != ens.n_paths() || increments.cols() != ens.n_steps() {
        return Err(Error::DimensionMismatch { expected: ens.n_paths() * ens.n_steps(), got: increments.rows() * increments.cols() });
    }
    if m == 0 || m > basis.m_max() {
        return Err(Error::IndexOutOfRange { index: m, max: basis.m_max() });
    }
    let per_path: Vec<Vec<T>> = (0..ens.n_paths())
        .into_par_iter()
        .map(|i| {
            let mut acc = vec![T::zero(); m];
            let mut phi = vec![T::zero(); m];
            for (&x, &db) in ens.path(i).iter().zip(increments.row(i)) {
                basis.fill(x, &mut phi);
                let w = sigma(x) * db;
                for (a, &p) in acc.iter_mut().zip(&phi) {
                    *a += p * w;
                }
            }
            acc
        })
        .collect();
    let nt = ens.total_time();
    let mut out = vec![T::zero(); m];
    for p in &per_path {
        add_into(&mut out, p);
    }
    Ok(out.into_iter().map(|v| v / nt).collect())
}
