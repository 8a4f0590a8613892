//! Nonparametric drift estimation for ensembles of diffusion paths driven by
//! correlated Brownian motions.
//!
//! Paths `dX^i = b(X^i) dt + σ(X^i) dB^i`, `i = 1..N`, with
//! `E(B^i_s B^k_t) = R_{i,k}(s ∧ t)`, are simulated on a uniform grid; `b` is
//! estimated by least squares on nested spaces spanned by an orthonormal
//! basis, and the dimension is chosen by a penalized contrast.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bench;
pub mod correlation;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod scalar;
pub mod selection;
pub mod simulate;

pub use basis::{BasisFamily, DEFAULT_L_GRID};
pub use error::{Error, Result};
pub use estimator::{GateKind, GateSpec};
pub use scalar::Scalar;
pub use simulate::{ModelId, Scheme, SimulationSpec, StreamKey};

pub type Basis = basis::Basis<f64>;
pub type CorrelationMatrix = correlation::CorrelationMatrix<f64>;
pub type CholeskyFactor = correlation::CholeskyFactor<f64>;
pub type Matrix = linalg::Matrix<f64>;
pub type ModelSpec = simulate::ModelSpec<f64>;
pub type PathEnsemble = simulate::PathEnsemble<f64>;
pub type DriftEstimate = estimator::DriftEstimate<f64>;
pub type GramMatrices = estimator::GramMatrices<f64>;
pub type EmpiricalMoments = estimator::EmpiricalMoments<f64>;
pub type SelectionResult = selection::SelectionResult<f64>;

pub type Basis32 = basis::Basis<f32>;
pub type CorrelationMatrix32 = correlation::CorrelationMatrix<f32>;
pub type ModelSpec32 = simulate::ModelSpec<f32>;
pub type PathEnsemble32 = simulate::PathEnsemble<f32>;
pub type DriftEstimate32 = estimator::DriftEstimate<f32>;
