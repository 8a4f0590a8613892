//! Data-driven choice of the dimension `m̂ = argmin_m {−‖b̂_m‖²_N + pen(m)}`
//! over the dimensions admitted by a stability gate.

use crate::basis::Basis;
use crate::correlation::CorrelationMatrix;
use crate::error::{invalid, Error, Result};
use crate::estimator::{
    solve_coefficients, Diagnostics, DriftEstimate, EmpiricalMoments, GateSpec, GramMatrices, Weight,
};
use crate::linalg::cholesky_inverse;
use crate::scalar::Scalar;
use crate::simulate::PathEnsemble;

pub const DEFAULT_KAPPA: f64 = 2.0;

/// `κ (m/NT) ‖Ψ̂_m^{-1} Ψ̂_{m,σ}‖_op`; the operator norm is the largest
/// singular value of the (nonsymmetric) product.
pub fn penalty_empirical<T: Scalar>(m: usize, grams: &GramMatrices<T>, n_paths: usize, horizon: T, kappa: T) -> Result<T> {
    let psi_sigma = grams
        .psi_hat_sigma
        .as_ref()
        .ok_or_else(|| invalid("sigma", "the empirical penalty needs Ψ̂_{m,σ}"))?;
    if grams.m != m {
        return Err(Error::DimensionMismatch { expected: m, got: grams.m });
    }
    let chol = grams.psi_hat.cholesky(T::zero()).map_err(|_| Error::SingularGram { m })?;
    let product = cholesky_inverse(&chol).matmul(psi_sigma)?;
    let norm = product.op_norm()?;
    if !norm.is_finite() {
        return Err(Error::SingularGram { m });
    }
    let nt = horizon * T::of_usize(n_paths);
    Ok(kappa * T::of_usize(m) / nt * norm)
}

/// `κ (m/NT) (1 + (1/N) Σ_{i≠k} |R_{i,k}|)`, for runs where `R` is known.
pub fn penalty_theoretical<T: Scalar>(m: usize, n_paths: usize, horizon: T, r: &CorrelationMatrix<T>, kappa: T) -> T {
    let nt = horizon * T::of_usize(n_paths);
    kappa * T::of_usize(m) / nt * (T::one() + r.off_diagonal_abs_mean())
}

#[derive(Debug, Clone, Copy)]
pub enum PenaltyKind<'a, T> {
    /// Ψ̂-based penalty; requires `σ`.
    Empirical,
    /// Penalty driven by a known correlation matrix.
    Theoretical(&'a CorrelationMatrix<T>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriterionRow<T> {
    pub m: usize,
    pub admissible: bool,
    /// `‖b̂_m‖²_N`, absent for inadmissible `m`.
    pub norm_sq: Option<T>,
    pub penalty: Option<T>,
    pub criterion: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult<T> {
    pub m_hat: usize,
    pub rows: Vec<CriterionRow<T>>,
    pub admissible: Vec<usize>,
    /// Fits for every admissible `m`, in increasing order.
    pub fits: Vec<DriftEstimate<T>>,
    pub estimate: DriftEstimate<T>,
}

impl<T: Scalar> SelectionResult<T> {
    pub fn fit(&self, m: usize) -> Option<&DriftEstimate<T>> {
        self.fits.iter().find(|f| f.m == m)
    }

    pub fn selected_penalty(&self) -> T {
        self.rows[self.m_hat - 1].penalty.expect("selected dimension is admissible")
    }
}

/// Dimensions `m ≤ m_max` that pass the gate and whose Gram matrix factors.
pub fn admissible_from_moments<T: Scalar>(moments: &EmpiricalMoments<T>, m_max: usize, gate: &GateSpec) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for m in 1..=m_max.min(moments.max_dim()) {
        let g = moments.gram(m)?;
        let outcome = gate.evaluate(m, g.inv_op_norm, moments.basis(), moments.n_paths(), moments.horizon())?;
        if outcome.passed && g.psi_hat.cholesky(T::zero()).is_ok() {
            out.push(m);
        }
    }
    Ok(out)
}

pub fn admissible_models<T: Scalar>(ens: &PathEnsemble<T>, basis: &Basis<T>, m_max: usize, gate: &GateSpec) -> Result<Vec<usize>> {
    check_m_max(ens, basis, m_max)?;
    let moments = EmpiricalMoments::compute(ens, basis, m_max, None)?;
    admissible_from_moments(&moments, m_max, gate)
}

fn check_m_max<T: Scalar>(ens: &PathEnsemble<T>, basis: &Basis<T>, m_max: usize) -> Result<()> {
    let n_t = (ens.total_time().floor().to_usize().unwrap_or(usize::MAX)).saturating_add(1);
    if m_max == 0 || m_max > basis.m_max() || m_max > n_t {
        return Err(invalid("m_max", format!("must lie in 1..={}", basis.m_max().min(n_t))));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionSpec<'a, T> {
    pub m_max: usize,
    pub kappa: T,
    pub gate: GateSpec,
    pub penalty: PenaltyKind<'a, T>,
}

impl<'a, T: Scalar> SelectionSpec<'a, T> {
    pub fn new(m_max: usize) -> Self {
        Self { m_max, kappa: T::of(DEFAULT_KAPPA), gate: GateSpec::default(), penalty: PenaltyKind::Empirical }
    }
}

pub fn select<T: Scalar>(
    ens: &PathEnsemble<T>,
    basis: &Basis<T>,
    spec: &SelectionSpec<'_, T>,
    sigma: Option<Weight<'_, T>>,
) -> Result<SelectionResult<T>> {
    check_m_max(ens, basis, spec.m_max)?;
    if !(spec.kappa >= T::zero()) {
        return Err(invalid("kappa", "must be nonnegative"));
    }
    if matches!(spec.penalty, PenaltyKind::Empirical) && sigma.is_none() {
        return Err(invalid("sigma", "the empirical penalty needs the diffusion coefficient"));
    }
    let moments = EmpiricalMoments::compute(ens, basis, spec.m_max, sigma)?;
    select_from_moments(&moments, spec)
}

pub fn select_from_moments<T: Scalar>(moments: &EmpiricalMoments<T>, spec: &SelectionSpec<'_, T>) -> Result<SelectionResult<T>> {
    let admissible = admissible_from_moments(moments, spec.m_max, &spec.gate)?;
    if admissible.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let (n, horizon) = (moments.n_paths(), moments.horizon());
    let mut rows: Vec<CriterionRow<T>> = (1..=spec.m_max)
        .map(|m| CriterionRow { m, admissible: false, norm_sq: None, penalty: None, criterion: None })
        .collect();
    let mut fits = Vec::with_capacity(admissible.len());
    let mut best: Option<(usize, T)> = None;
    for &m in &admissible {
        let gram = moments.gram(m)?;
        let theta = solve_coefficients(&gram, &moments.target(m)?)?;
        let norm_sq = quadratic_form(&gram, &theta);
        let penalty = match spec.penalty {
            PenaltyKind::Empirical => penalty_empirical(m, &gram, n, horizon, spec.kappa)?,
            PenaltyKind::Theoretical(r) => penalty_theoretical(m, n, horizon, r, spec.kappa),
        };
        let criterion = -norm_sq + penalty;
        rows[m - 1] = CriterionRow { m, admissible: true, norm_sq: Some(norm_sq), penalty: Some(penalty), criterion: Some(criterion) };
        if best.is_none_or(|(_, c)| criterion < c) {
            best = Some((m, criterion));
        }
        let outcome = spec.gate.evaluate(m, gram.inv_op_norm, moments.basis(), n, horizon)?;
        fits.push(DriftEstimate {
            basis: *moments.basis(),
            m,
            theta,
            truncated: false,
            diagnostics: Diagnostics {
                condition_number: gram.condition_number(),
                inv_op_norm: gram.inv_op_norm,
                gate_value: outcome.value,
                gate_threshold: outcome.threshold,
            },
        });
    }
    let (m_hat, _) = best.expect("admissible set is nonempty");
    let estimate = fits.iter().find(|f| f.m == m_hat).cloned().expect("fit exists");
    Ok(SelectionResult { m_hat, rows, admissible, fits, estimate })
}

/// `θᵀ Ψ̂_m θ`, which equals `‖b̂_m‖²_N` on the same samples.
fn quadratic_form<T: Scalar>(gram: &GramMatrices<T>, theta: &[T]) -> T {
    let v = gram.psi_hat.matvec(theta).expect("matching dimension");
    v.iter().zip(theta).map(|(&a, &b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::simulate::ModelId;

    fn wiggly() -> PathEnsemble<f64> {
        let values = Matrix::from_fn(5, 401, |i, k| {
            let t = k as f64 * 0.05;
            0.5 + 0.45 * (t * (1.0 + 0.1 * i as f64)).sin() * (0.3 * t).cos()
        });
        PathEnsemble::new(values, 0.05, 0, ModelId::Custom, "").unwrap()
    }

    #[test]
    fn constant_sigma_penalty() {
        let ens = wiggly();
        let basis = Basis::cosine(0.0, 1.0, 6).unwrap();
        let s = |_: f64| 0.7;
        let moments = EmpiricalMoments::compute(&ens, &basis, 6, Some(&s)).unwrap();
        let nt = ens.total_time();
        for m in 1..=6 {
            let g = moments.gram(m).unwrap();
            let p = penalty_empirical(m, &g, ens.n_paths(), ens.horizon(), 2.0).unwrap();
            let expected = 2.0 * m as f64 * 0.49 / nt;
            assert!((p - expected).abs() < 1e-9 * expected, "m={m}: {p} vs {expected}");
            assert_eq!(penalty_empirical(m, &g, ens.n_paths(), ens.horizon(), 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn penalty_needs_sigma_gram() {
        let ens = wiggly();
        let g = crate::estimator::empirical_gram(&ens, &Basis::hermite(3).unwrap(), 3, None).unwrap();
        assert!(penalty_empirical(3, &g, 5, 20.0, 2.0).is_err());
    }

    #[test]
    fn theoretical_penalty_values() {
        let id = CorrelationMatrix::<f64>::identity(10).unwrap();
        assert!((penalty_theoretical(3, 10, 5.0, &id, 2.0) - 2.0 * 3.0 / 50.0).abs() < 1e-15);
        let r = CorrelationMatrix::toeplitz(100, 0.5f64).unwrap();
        let p = penalty_theoretical(4, 100, 100.0, &r, 1.0);
        assert!((p - 4.0 * 2.96 / 1e4).abs() < 1e-12);
        let p2 = penalty_theoretical(8, 100, 100.0, &r, 1.0);
        assert!((p2 - 2.0 * p).abs() < 1e-15);
    }

    #[test]
    fn single_admissible_model() {
        let ens = wiggly();
        let basis = Basis::cosine(0.0, 1.0, 5).unwrap();
        let s = |_: f64| 1.0;
        let res = select(&ens, &basis, &SelectionSpec::new(1), Some(&s)).unwrap();
        assert_eq!(res.m_hat, 1);
        assert_eq!(res.admissible, vec![1]);
    }

    #[test]
    fn huge_kappa_picks_smallest() {
        let ens = wiggly();
        let basis = Basis::cosine(0.0, 1.0, 8).unwrap();
        let s = |_: f64| 1.0;
        let mut spec = SelectionSpec::new(8);
        spec.kappa = 1e12;
        let res = select(&ens, &basis, &spec, Some(&s)).unwrap();
        assert_eq!(res.m_hat, res.admissible[0]);
    }

    #[test]
    fn empty_collection_reported() {
        let ens = wiggly();
        let basis = Basis::cosine(0.0, 1.0, 4).unwrap();
        let s = |_: f64| 1.0;
        let mut spec = SelectionSpec::new(4);
        spec.gate = GateSpec::default().with_scale(0.0);
        assert_eq!(select(&ens, &basis, &spec, Some(&s)).unwrap_err(), Error::EmptyCollection);
    }

    #[test]
    fn m_max_bounded_by_basis() {
        let ens = wiggly();
        let basis = Basis::cosine(0.0, 1.0, 4).unwrap();
        assert!(admissible_models(&ens, &basis, 5, &GateSpec::default()).is_err());
        assert!(admissible_models(&ens, &basis, 0, &GateSpec::default()).is_err());
    }
}
