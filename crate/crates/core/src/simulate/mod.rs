//! Ensembles of `N` paths driven by Brownian motions with correlation `R`.
//!
//! Gaussian draws for path `i` come from their own counter-based stream keyed
//! by `(seed, replicate, i)`, so output does not depend on the thread count.

mod ensemble;
mod model;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use ensemble::{PathEnsemble, MAGIC};
pub use model::{model_drift_sigma, ModelId, ModelSpec, ScalarFn, Scheme};

use crate::correlation::{CholeskyFactor, CorrelationMatrix};
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use model::Latent;

/// Identifies a family of random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub replicate: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replicate: u64) -> Self {
        Self { seed, replicate }
    }

    /// Generator for one path.
    pub fn path_rng(&self, path: usize) -> ChaCha8Rng {
        let mut state = self.seed ^ self.replicate.wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(path as u64);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSpec<T> {
    pub n_paths: usize,
    pub horizon: T,
    pub dt: T,
    pub seed: u64,
    pub replicate: u64,
}

impl<T: Scalar> SimulationSpec<T> {
    pub fn new(n_paths: usize, horizon: T, dt: T, seed: u64) -> Self {
        Self { n_paths, horizon, dt, seed, replicate: 0 }
    }

    pub fn replicate(mut self, replicate: u64) -> Self {
        self.replicate = replicate;
        self
    }

    pub fn key(&self) -> StreamKey {
        StreamKey::new(self.seed, self.replicate)
    }

    /// Number of steps `T/Δ`; the ratio must be integral up to round-off.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > T::zero()) {
            return Err(invalid("dt", "must be positive"));
        }
        if !(self.horizon > T::zero()) {
            return Err(invalid("T", "must be positive"));
        }
        if self.n_paths == 0 {
            return Err(invalid("N", "must be positive"));
        }
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > T::of(1e-6) * ratio.max(T::one()) || steps < T::one() {
            return Err(invalid("dt", format!("T/dt = {ratio} is not a positive integer")));
        }
        steps.to_usize().ok_or_else(|| invalid("dt", "too many steps"))
    }
}

/// `N × n_steps` Brownian increments whose column `k` is `√Δ · C Z_k`, so
/// `Cov(ΔB^i, ΔB^k) = R_{i,k} Δ`.
pub fn correlated_increments<T: Scalar>(
    factor: &CholeskyFactor<T>,
    n_steps: usize,
    dt: T,
    key: StreamKey,
) -> Matrix<T> {
    let n = factor.size();
    let sq = dt.sqrt();
    let z: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.path_rng(i);
            (0..n_steps).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect()
        })
        .collect();
    let lower = factor.lower();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if factor.is_identity() {
                return z[i].iter().map(|&v| v * sq).collect();
            }
            let mut out = vec![T::zero(); n_steps];
            for (l, zl) in z.iter().enumerate().take(i + 1) {
                let c = lower[(i, l)];
                if c == T::zero() {
                    continue;
                }
                for (o, &v) in out.iter_mut().zip(zl) {
                    *o += c * v;
                }
            }
            out.iter_mut().for_each(|o| *o *= sq);
            out
        })
        .collect();
    let mut data = Vec::with_capacity(n * n_steps);
    for row in rows {
        data.extend(row);
    }
    Matrix::from_vec(n, n_steps, data).expect("consistent shape")
}

/// An ensemble together with the Brownian increments that drove it.
#[derive(Debug, Clone)]
pub struct Simulated<T> {
    pub ensemble: PathEnsemble<T>,
    pub increments: Matrix<T>,
}

pub fn simulate_ensemble<T: Scalar>(
    model: &ModelSpec<T>,
    spec: &SimulationSpec<T>,
    correlation: &CorrelationMatrix<T>,
) -> Result<PathEnsemble<T>> {
    let factor = correlation.cholesky()?;
    Ok(simulate_with_factor(model, spec, &factor, &correlation.kind().to_string())?.ensemble)
}

/// Simulates with a precomputed factor of `R`; `label` is stored as the
/// ensemble's correlation provenance.
pub fn simulate_with_factor<T: Scalar>(
    model: &ModelSpec<T>,
    spec: &SimulationSpec<T>,
    factor: &CholeskyFactor<T>,
    label: &str,
) -> Result<Simulated<T>> {
    let n_steps = spec.n_steps()?;
    if factor.size() != spec.n_paths {
        return Err(Error::DimensionMismatch { expected: spec.n_paths, got: factor.size() });
    }
    let dt = spec.dt;
    let increments = correlated_increments(factor, n_steps, dt, spec.key());
    let latent = model.latent();
    let xi0 = model.to_latent(model.x0());
    if !xi0.is_finite() {
        return Err(invalid("x0", "outside the model's state space"));
    }

    let rows: Vec<Result<Vec<T>>> = (0..spec.n_paths)
        .into_par_iter()
        .map(|i| {
            let db = increments.row(i);
            let mut out = Vec::with_capacity(n_steps + 1);
            out.push(model.x0());
            let mut xi = xi0;
            match &latent {
                Latent::Euler { drift, diffusion } => {
                    for (k, &d) in db.iter().enumerate() {
                        xi = xi + drift(xi) * dt + diffusion(xi) * d;
                        let x = model.to_observed(xi);
                        if !x.is_finite() {
                            return Err(Error::NonFiniteState { path: i, step: k + 1 });
                        }
                        out.push(x);
                    }
                }
                Latent::ExactOu { kappa, scale } => {
                    let decay = (-*kappa * dt).exp();
                    let sd = *scale * ((T::one() - (-T::of(2.0) * *kappa * dt).exp()) / (T::of(2.0) * *kappa)).sqrt();
                    let unit = dt.sqrt().recip();
                    for (k, &d) in db.iter().enumerate() {
                        xi = decay * xi + sd * d * unit;
                        let x = model.to_observed(xi);
                        if !x.is_finite() {
                            return Err(Error::NonFiniteState { path: i, step: k + 1 });
                        }
                        out.push(x);
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut data = Vec::with_capacity(spec.n_paths * (n_steps + 1));
    for row in rows {
        data.extend(row?);
    }
    let values = Matrix::from_vec(spec.n_paths, n_steps + 1, data)?;
    let ensemble = PathEnsemble::new(values, dt, spec.seed, model.id(), label)?;
    Ok(Simulated { ensemble, increments })
}
