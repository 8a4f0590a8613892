//! Monte-Carlo studies: MISE tables across models, bases and correlation
//! strengths, plus the closed-form checks that accompany them.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::correlation::{CorrelationMatrix, DependenceStats};
use crate::error::{invalid, Result};
use crate::estimator::{noise_projection, DriftEstimate, EmpiricalMoments, GateSpec};
use crate::linalg::{cholesky_inverse, Matrix};
use crate::scalar::Scalar;
use crate::selection::{select_from_moments, PenaltyKind, SelectionSpec, DEFAULT_KAPPA};
use crate::simulate::{simulate_with_factor, ModelId, ModelSpec, SimulationSpec, StreamKey};

/// `∫_I (b̂ − b)²` by the trapezoid rule on `grid_n` equispaced points of the
/// model's interval.
pub fn mise<T: Scalar>(est: &DriftEstimate<T>, model: &ModelSpec<T>, grid_n: usize) -> Result<T> {
    integrated_sq_error(|x| est.eval(x), |x| model.drift(x), model.interval(), grid_n)
}

pub fn integrated_sq_error<T: Scalar>(
    f: impl Fn(T) -> T,
    g: impl Fn(T) -> T,
    (a, b): (T, T),
    grid_n: usize,
) -> Result<T> {
    if grid_n < 2 {
        return Err(invalid("grid_n", "need at least two grid points"));
    }
    let h = (b - a) / T::of_usize(grid_n - 1);
    let mut s = T::zero();
    for k in 0..grid_n {
        let x = if k + 1 == grid_n { b } else { a + h * T::of_usize(k) };
        let d = f(x) - g(x);
        let w = if k == 0 || k + 1 == grid_n { T::of(0.5) } else { T::one() };
        s += w * d * d;
    }
    Ok(s * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisChoice {
    Hermite,
    Cosine,
}

impl BasisChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            BasisChoice::Hermite => "hermite",
            BasisChoice::Cosine => "cosine",
        }
    }

    /// Largest dimension used for the benchmark models: 10 for Hermite (15 on
    /// Ex.5), 20 for cosine.
    pub fn default_m_max(&self, model: ModelId) -> usize {
        match (self, model) {
            (BasisChoice::Hermite, ModelId::Ex5) => 15,
            (BasisChoice::Hermite, _) => 10,
            (BasisChoice::Cosine, _) => 20,
        }
    }

    /// Cosine bases live on the model's interval.
    pub fn build<T: Scalar>(&self, model: &ModelSpec<T>, m_max: usize) -> Result<Basis<T>> {
        match self {
            BasisChoice::Hermite => Basis::hermite(m_max),
            BasisChoice::Cosine => {
                let (a, b) = model.interval();
                Basis::cosine(a, b, m_max)
            }
        }
    }
}

impl fmt::Display for BasisChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One-parameter correlation families swept by a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrelationFamily {
    Identity,
    /// `ρ^{|i−k|}`
    Toeplitz,
    /// Single-factor band, parameter `a ∈ [0, 1]`.
    Tridiagonal,
    /// `R_{i,k} = ρ` off the diagonal.
    Equicorrelated,
    /// Independent Toeplitz blocks of the given size.
    BlockToeplitz { block: usize },
}

impl CorrelationFamily {
    pub fn build<T: Scalar>(&self, n: usize, param: T) -> Result<CorrelationMatrix<T>> {
        match *self {
            CorrelationFamily::Identity => CorrelationMatrix::identity(n),
            CorrelationFamily::Toeplitz => CorrelationMatrix::toeplitz(n, param),
            CorrelationFamily::Tridiagonal => CorrelationMatrix::tridiagonal_factor(n, param),
            CorrelationFamily::Equicorrelated => CorrelationMatrix::equicorrelated(n, param),
            CorrelationFamily::BlockToeplitz { block } => {
                if block == 0 || !n.is_multiple_of(block) {
                    return Err(invalid("block", format!("block size {block} must divide N = {n}")));
                }
                let b = CorrelationMatrix::toeplitz(block, param)?;
                CorrelationMatrix::block_diagonal(&vec![b; n / block])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub models: Vec<ModelId>,
    pub bases: Vec<BasisChoice>,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub replicates: usize,
    pub correlation: CorrelationFamily,
    /// Parameter values swept for the correlation family.
    pub rhos: Vec<f64>,
    pub kappa: f64,
    /// Overrides the per-basis default largest dimension.
    pub m_max: Option<usize>,
    pub seed: u64,
    pub mise_grid: usize,
    pub gate: GateSpec,
    /// Overrides the models' default starting points.
    pub x0: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            models: vec![ModelId::Ex1],
            bases: vec![BasisChoice::Hermite],
            n_paths: 100,
            horizon: 100.0,
            dt: 0.1,
            replicates: 25,
            correlation: CorrelationFamily::Toeplitz,
            rhos: vec![0.0],
            kappa: DEFAULT_KAPPA,
            m_max: None,
            seed: 1,
            mise_grid: 500,
            gate: GateSpec::default(),
            x0: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.models.contains(&ModelId::Custom) {
            return Err(invalid("model", "need one or more of ex1..ex5"));
        }
        if self.bases.is_empty() {
            return Err(invalid("basis", "need at least one basis"));
        }
        if self.n_paths == 0 {
            return Err(invalid("N", "must be positive"));
        }
        if !(self.horizon > 0.0) || !(self.dt > 0.0) {
            return Err(invalid("T", "T and dt must be positive"));
        }
        SimulationSpec::new(self.n_paths, self.horizon, self.dt, self.seed).n_steps()?;
        if self.replicates == 0 {
            return Err(invalid("replicates", "must be at least 1"));
        }
        if self.rhos.is_empty() {
            return Err(invalid("rho", "need at least one value"));
        }
        for &rho in &self.rhos {
            if matches!(self.correlation, CorrelationFamily::Toeplitz | CorrelationFamily::BlockToeplitz { .. })
                && !(rho.abs() < 1.0)
            {
                return Err(invalid("rho", format!("rho must lie in (-1, 1), got {rho}")));
            }
        }
        if !(self.kappa >= 0.0) {
            return Err(invalid("kappa", "must be nonnegative"));
        }
        if self.m_max == Some(0) {
            return Err(invalid("m_max", "must be at least 1"));
        }
        if self.mise_grid < 2 {
            return Err(invalid("mise_grid", "need at least two points"));
        }
        self.gate.validate()
    }

    pub fn m_max_for(&self, basis: BasisChoice, model: ModelId) -> usize {
        self.m_max.unwrap_or_else(|| basis.default_m_max(model))
    }

    pub fn model(&self, id: ModelId) -> Result<ModelSpec<f64>> {
        let m = ModelSpec::paper(id)?;
        match self.x0 {
            Some(x0) => m.with_x0(x0),
            None => Ok(m),
        }
    }
}

/// Aggregate over replicates for one (model, basis, ρ) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: ModelId,
    pub basis: BasisChoice,
    pub rho: f64,
    pub mean_mise_x100: f64,
    pub std_mise_x100: f64,
    pub mean_dim: f64,
    pub std_dim: f64,
    pub replicates: usize,
    pub failures: usize,
}

/// Outcome of one replicate in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub model: ModelId,
    pub basis: BasisChoice,
    pub rho: f64,
    pub replicate: usize,
    pub m_hat: usize,
    pub mise: f64,
    /// Smallest MISE over the admissible dimensions of this replicate.
    pub oracle_mise: f64,
    pub oracle_m: usize,
    pub selected_penalty: f64,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub model: ModelId,
    pub basis: Option<BasisChoice>,
    pub rho: f64,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyOutput {
    pub rows: Vec<BenchRow>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<FailureRecord>,
}

impl StudyOutput {
    pub fn row(&self, model: ModelId, basis: BasisChoice, rho: f64) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.model == model && r.basis == basis && r.rho == rho)
    }

    pub fn records_for(&self, model: ModelId, basis: BasisChoice, rho: f64) -> impl Iterator<Item = &ReplicateRecord> {
        self.records.iter().filter(move |r| r.model == model && r.basis == basis && r.rho == rho)
    }
}

fn model_seed(seed: u64, model: ModelId) -> u64 {
    let idx = ModelId::PAPER.iter().position(|&m| m == model).unwrap_or(5) as u64;
    seed.wrapping_add(idx.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs every (model, ρ, replicate) simulation once and fits every basis on
/// it. Replicate `r` of a model uses the same driving Gaussian draws for
/// every ρ, so cells are compared on matched seeds.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    cfg.validate()?;
    let mut out = StudyOutput::default();
    for &model_id in &cfg.models {
        let model = cfg.model(model_id)?;
        let sigma = |x: f64| model.diffusion(x);
        for &rho in &cfg.rhos {
            let r = cfg.correlation.build(cfg.n_paths, rho)?;
            let factor = r.cholesky()?;
            let label = r.kind().to_string();
            let spec = SimulationSpec::new(cfg.n_paths, cfg.horizon, cfg.dt, model_seed(cfg.seed, model_id));
            let outcomes: Vec<Vec<std::result::Result<ReplicateRecord, FailureRecord>>> = (0..cfg.replicates)
                .into_par_iter()
                .map(|rep| {
                    let fail = |basis: Option<BasisChoice>, e: crate::error::Error| FailureRecord {
                        model: model_id,
                        basis,
                        rho,
                        replicate: rep,
                        error: e.to_string(),
                    };
                    let sim = match simulate_with_factor(&model, &spec.replicate(rep as u64), &factor, &label) {
                        Ok(s) => s,
                        Err(e) => return cfg.bases.iter().map(|&b| Err(fail(Some(b), e.clone()))).collect(),
                    };
                    cfg.bases
                        .iter()
                        .map(|&choice| {
                            fit_replicate(cfg, &model, choice, &sim.ensemble, &sigma, rho, rep)
                                .map_err(|e| fail(Some(choice), e))
                        })
                        .collect()
                })
                .collect();
            for per_rep in outcomes {
                for o in per_rep {
                    match o {
                        Ok(rec) => out.records.push(rec),
                        Err(f) => out.failures.push(f),
                    }
                }
            }
            for &choice in &cfg.bases {
                let recs: Vec<&ReplicateRecord> = out.records_for(model_id, choice, rho).collect();
                let mises: Vec<f64> = recs.iter().map(|r| 100.0 * r.mise).collect();
                let dims: Vec<f64> = recs.iter().map(|r| r.m_hat as f64).collect();
                let (mean_mise_x100, std_mise_x100) = mean_std(&mises);
                let (mean_dim, std_dim) = mean_std(&dims);
                let failures = out
                    .failures
                    .iter()
                    .filter(|f| f.model == model_id && f.rho == rho && f.basis.is_none_or(|b| b == choice))
                    .count();
                out.rows.push(BenchRow {
                    model: model_id,
                    basis: choice,
                    rho,
                    mean_mise_x100,
                    std_mise_x100,
                    mean_dim,
                    std_dim,
                    replicates: recs.len(),
                    failures,
                });
            }
        }
    }
    Ok(out)
}

fn fit_replicate(
    cfg: &ExperimentConfig,
    model: &ModelSpec<f64>,
    choice: BasisChoice,
    ens: &crate::simulate::PathEnsemble<f64>,
    sigma: &(dyn Fn(f64) -> f64 + Sync),
    rho: f64,
    rep: usize,
) -> Result<ReplicateRecord> {
    let m_max = cfg.m_max_for(choice, model.id());
    let basis = choice.build(model, m_max)?;
    let moments = EmpiricalMoments::compute(ens, &basis, m_max, Some(sigma))?;
    let spec = SelectionSpec { m_max, kappa: cfg.kappa, gate: cfg.gate, penalty: PenaltyKind::Empirical };
    let sel = select_from_moments(&moments, &spec)?;
    let mise_sel = mise(&sel.estimate, model, cfg.mise_grid)?;
    let mut oracle = (f64::INFINITY, 0);
    for fit in &sel.fits {
        let v = mise(fit, model, cfg.mise_grid)?;
        if v < oracle.0 {
            oracle = (v, fit.m);
        }
    }
    Ok(ReplicateRecord {
        model: model.id(),
        basis: choice,
        rho,
        replicate: rep,
        m_hat: sel.m_hat,
        mise: mise_sel,
        oracle_mise: oracle.0,
        oracle_m: oracle.1,
        selected_penalty: sel.selected_penalty(),
        theta: sel.estimate.theta.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParametricCheck {
    pub mc_mse: f64,
    pub formula_mse: f64,
}

/// Monte-Carlo risk of `θ̂_N = θ + (σ/NT) Σ_i B^i_T` in the geometric
/// Brownian model `dX = μX dt + σX dB` (`θ = μ − σ²/2`), against
/// `(σ²/NT)(1 + (1/N) Σ_{i≠k} R_{i,k})`.
pub fn parametric_rate_check(
    horizon: f64,
    r: &CorrelationMatrix<f64>,
    mu: f64,
    sigma: f64,
    replicates: usize,
    seed: u64,
) -> Result<ParametricCheck> {
    if !(sigma > 0.0) || !(horizon > 0.0) {
        return Err(invalid("sigma", "sigma and T must be positive"));
    }
    if replicates == 0 {
        return Err(invalid("replicates", "must be positive"));
    }
    let n = r.size();
    let factor = r.cholesky()?;
    // Σ_i (C z)_i = Σ_l (Σ_i C_{i,l}) z_l
    let lower = factor.lower();
    let col_sums: Vec<f64> = (0..n).map(|l| (l..n).map(|i| lower[(i, l)]).sum()).collect();
    let theta = mu - sigma * sigma / 2.0;
    let nt = n as f64 * horizon;
    let sq_errors: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let mut rng = StreamKey::new(seed, rep as u64).path_rng(0);
            let total: f64 = col_sums.iter().map(|&w| w * rng.sample::<f64, _>(StandardNormal)).sum();
            let sum_bt = horizon.sqrt() * total;
            let estimate = theta + sigma / nt * sum_bt;
            (estimate - theta).powi(2)
        })
        .collect();
    let mc_mse = sq_errors.iter().sum::<f64>() / replicates as f64;
    let formula_mse = sigma * sigma / nt * (1.0 + r.off_diagonal_mean());
    Ok(ParametricCheck { mc_mse, formula_mse })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tab0Row {
    pub rho: f64,
    pub abs_sum: f64,
    pub op_norm: f64,
}

/// Dependence statistics of `toeplitz(n, ρ)` for each `ρ`.
pub fn tab0_stats(n: usize, rhos: &[f64]) -> Result<Vec<Tab0Row>> {
    rhos.iter()
        .map(|&rho| {
            let DependenceStats { abs_sum, op_norm } = CorrelationMatrix::toeplitz(n, rho)?.dependence_stats()?;
            Ok(Tab0Row { rho, abs_sum, op_norm })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceBoundReport {
    /// Monte-Carlo `trace(Ψ_m^{-1/2} Ψ_{m,σ} Ψ_m^{-1/2})`.
    pub trace: f64,
    /// `m ‖σ‖²_∞ (1 + (1/N) Σ_{i≠k} |R_{i,k}|)` with the sup over observed
    /// states.
    pub bound: f64,
    pub sigma_sup_sq: f64,
    pub psi: Matrix<f64>,
    pub psi_sigma: Matrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceBoundSpec {
    pub m: usize,
    pub n_paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub replicates: usize,
    pub seed: u64,
}

/// Estimates `Ψ_m = E Ψ̂_m` and `Ψ_{m,σ} = NT E(Ê_m Ê_mᵀ)` by averaging
/// over independent replicates, where `Ê_m` is the martingale part of the
/// target computed from the simulated Brownian increments.
pub fn trace_bound_check(
    model: &ModelSpec<f64>,
    basis: &Basis<f64>,
    r: &CorrelationMatrix<f64>,
    spec: &TraceBoundSpec,
) -> Result<TraceBoundReport> {
    let m = spec.m;
    if spec.replicates == 0 {
        return Err(invalid("replicates", "must be positive"));
    }
    if !matches!(model.scheme(), crate::simulate::Scheme::Euler) || matches!(model.id(), ModelId::Ex4 | ModelId::Ex5) {
        return Err(invalid("model", "the noise decomposition needs a model simulated on its observed scale"));
    }
    let factor = r.cholesky()?;
    let label = r.kind().to_string();
    let sim_spec = SimulationSpec::new(spec.n_paths, spec.horizon, spec.dt, spec.seed);
    let sigma = |x: f64| model.diffusion(x);
    let per_rep: Vec<Result<(Matrix<f64>, Matrix<f64>, f64)>> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| {
            let sim = simulate_with_factor(model, &sim_spec.replicate(rep as u64), &factor, &label)?;
            let ens = &sim.ensemble;
            let gram = EmpiricalMoments::compute(ens, basis, m, None)?.gram(m)?;
            let e = noise_projection(ens, &sim.increments, basis, m, &sigma)?;
            let outer = Matrix::from_fn(m, m, |j, l| e[j] * e[l]);
            let sup = ens
                .values()
                .as_slice()
                .iter()
                .fold(0.0f64, |acc, &x| acc.max(sigma(x) * sigma(x)));
            Ok((gram.psi_hat, outer, sup))
        })
        .collect();
    let mut psi = Matrix::zeros(m, m);
    let mut outer = Matrix::zeros(m, m);
    let mut sigma_sup_sq = 0.0f64;
    for item in per_rep {
        let (p, o, s) = item?;
        for j in 0..m {
            for l in 0..m {
                psi[(j, l)] += p[(j, l)];
                outer[(j, l)] += o[(j, l)];
            }
        }
        sigma_sup_sq = sigma_sup_sq.max(s);
    }
    let reps = spec.replicates as f64;
    let nt = spec.n_paths as f64 * spec.horizon;
    let psi = psi.scaled(1.0 / reps);
    let psi_sigma = outer.scaled(nt / reps);
    // trace(Ψ^{-1/2} Ψ_σ Ψ^{-1/2}) = trace(Ψ^{-1} Ψ_σ)
    let chol = psi.cholesky(0.0).map_err(|_| crate::error::Error::SingularGram { m })?;
    let trace = cholesky_inverse(&chol).matmul(&psi_sigma)?.trace();
    let bound = m as f64 * sigma_sup_sq * (1.0 + r.off_diagonal_abs_mean());
    Ok(TraceBoundReport { trace, bound, sigma_sup_sq, psi, psi_sigma })
}
