//! Drift/diffusion pairs of the five benchmark diffusions plus user-supplied
//! models.
//!
//! Ex.2–Ex.5 are smooth images `X = G(ξ)` of a latent one-dimensional
//! diffusion `ξ`; they are simulated on the latent scale and mapped through
//! `G`, which by Itô's formula gives the closed-form `b`, `σ` below.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    Ex5,
    Custom,
}

impl ModelId {
    pub const PAPER: [ModelId; 5] = [ModelId::Ex1, ModelId::Ex2, ModelId::Ex3, ModelId::Ex4, ModelId::Ex5];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelId::Ex1 => "ex1",
            ModelId::Ex2 => "ex2",
            ModelId::Ex3 => "ex3",
            ModelId::Ex4 => "ex4",
            ModelId::Ex5 => "ex5",
            ModelId::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ex1" | "1" => Some(ModelId::Ex1),
            "ex2" | "2" => Some(ModelId::Ex2),
            "ex3" | "3" => Some(ModelId::Ex3),
            "ex4" | "4" => Some(ModelId::Ex4),
            "ex5" | "5" => Some(ModelId::Ex5),
            "custom" => Some(ModelId::Custom),
            _ => None,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Euler–Maruyama on the observed (Ex.1, custom) or latent (Ex.4, Ex.5)
    /// scale.
    Euler,
    /// Exact Gaussian autoregression of a latent Ornstein–Uhlenbeck process,
    /// then a deterministic map (Ex.2, Ex.3).
    ExactOuThenTransform,
}

// Ex.1
const EX1_THETA: f64 = 2.0;
const EX1_GAMMA: f64 = std::f64::consts::FRAC_1_SQRT_2;
// Ex.2
const EX2_R: f64 = 2.0;
const EX2_GAMMA: f64 = 2.0;
// Ex.3
const EX3_R: f64 = 1.0;
const EX3_GAMMA: f64 = 2.0;
// Ex.4
const EX4_THETA: f64 = 3.0;
const EX4_C: f64 = 2.0;
// Ex.5
const EX5_THETA: f64 = 1.0;
const EX5_C: f64 = 10.0;
const EX5_SHIFT: f64 = 5.0;

const LOG_FLOOR: f64 = 1e-30;

#[derive(Clone)]
enum Dynamics<T> {
    Paper,
    Custom { drift: ScalarFn<T>, diffusion: ScalarFn<T> },
}

/// A scalar diffusion `dX = b(X) dt + σ(X) dB` with its starting point and
/// the interval on which estimates are displayed and scored.
#[derive(Clone)]
pub struct ModelSpec<T> {
    id: ModelId,
    x0: T,
    interval: (T, T),
    dynamics: Dynamics<T>,
}

impl<T: Scalar> fmt::Debug for ModelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("id", &self.id)
            .field("x0", &self.x0)
            .field("interval", &self.interval)
            .finish()
    }
}

impl<T: Scalar> ModelSpec<T> {
    /// One of the five benchmark models with its default start (`X_0 = 0`,
    /// except `X_0 = 1` for Ex.3 so that the latent OU starts at 0).
    pub fn paper(id: ModelId) -> Result<Self> {
        let (x0, a, b) = match id {
            ModelId::Ex1 => (0.0, -0.9, 0.8),
            ModelId::Ex2 => (0.0, -0.9, 0.9),
            ModelId::Ex3 => (1.0, 0.44, 2.0),
            ModelId::Ex4 => (0.0, -1.15, 1.15),
            ModelId::Ex5 => (0.0, -4.0, 4.0),
            ModelId::Custom => return Err(invalid("model", "custom models need explicit b and sigma")),
        };
        Ok(Self { id, x0: T::of(x0), interval: (T::of(a), T::of(b)), dynamics: Dynamics::Paper })
    }

    pub fn custom(
        drift: impl Fn(T) -> T + Send + Sync + 'static,
        diffusion: impl Fn(T) -> T + Send + Sync + 'static,
        x0: T,
        interval: (T, T),
    ) -> Result<Self> {
        if !(interval.1 > interval.0) {
            return Err(invalid("interval", "need a < b"));
        }
        if !x0.is_finite() {
            return Err(invalid("x0", "must be finite"));
        }
        Ok(Self {
            id: ModelId::Custom,
            x0,
            interval,
            dynamics: Dynamics::Custom { drift: Arc::new(drift), diffusion: Arc::new(diffusion) },
        })
    }

    /// Overrides the starting point; it must lie in the model's state space.
    pub fn with_x0(mut self, x0: T) -> Result<Self> {
        let ok = match self.id {
            ModelId::Ex2 => x0.abs() < T::one(),
            ModelId::Ex3 => x0 > T::zero(),
            _ => x0.is_finite(),
        };
        if !ok {
            return Err(invalid("x0", format!("{x0} is outside the state space of {}", self.id)));
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn with_interval(mut self, a: T, b: T) -> Result<Self> {
        if !(b > a) {
            return Err(invalid("interval", "need a < b"));
        }
        self.interval = (a, b);
        Ok(self)
    }

    pub fn id(&self) -> ModelId {
        self.id
    }

    pub fn x0(&self) -> T {
        self.x0
    }

    pub fn interval(&self) -> (T, T) {
        self.interval
    }

    pub fn scheme(&self) -> Scheme {
        match self.id {
            ModelId::Ex2 | ModelId::Ex3 => Scheme::ExactOuThenTransform,
            _ => Scheme::Euler,
        }
    }

    pub fn drift(&self, x: T) -> T {
        match &self.dynamics {
            Dynamics::Custom { drift, .. } => drift(x),
            Dynamics::Paper => paper_drift_sigma(self.id, x).0,
        }
    }

    pub fn diffusion(&self, x: T) -> T {
        match &self.dynamics {
            Dynamics::Custom { diffusion, .. } => diffusion(x),
            Dynamics::Paper => paper_drift_sigma(self.id, x).1,
        }
    }

    /// Latent dynamics used by the simulator.
    pub(crate) fn latent(&self) -> Latent<T> {
        match (&self.dynamics, self.id) {
            (Dynamics::Custom { drift, diffusion }, _) => {
                Latent::Euler { drift: drift.clone(), diffusion: diffusion.clone() }
            }
            (Dynamics::Paper, ModelId::Ex1) => Latent::Euler {
                drift: Arc::new(|x: T| -T::of(EX1_THETA) * x),
                diffusion: Arc::new(|x: T| T::of(EX1_GAMMA) * (T::one() + x * x).sqrt()),
            },
            (Dynamics::Paper, ModelId::Ex2) => {
                Latent::ExactOu { kappa: T::of(EX2_R / 2.0), scale: T::of(EX2_GAMMA / 2.0) }
            }
            (Dynamics::Paper, ModelId::Ex3) => {
                Latent::ExactOu { kappa: T::of(EX3_R / 2.0), scale: T::of(EX3_GAMMA / 2.0) }
            }
            (Dynamics::Paper, ModelId::Ex4) => Latent::Euler {
                drift: Arc::new(|x: T| alpha(T::of(EX4_THETA), T::of(EX4_C), x)),
                diffusion: Arc::new(|_| T::one()),
            },
            (Dynamics::Paper, ModelId::Ex5) => Latent::Euler {
                drift: Arc::new(|x: T| alpha(T::of(EX5_THETA), T::of(EX5_C), x)),
                diffusion: Arc::new(|_| T::one()),
            },
            (Dynamics::Paper, ModelId::Custom) => unreachable!("paper dynamics always carry a paper id"),
        }
    }

    /// Map from the latent state to the observed state.
    pub(crate) fn to_observed(&self, xi: T) -> T {
        match (&self.dynamics, self.id) {
            (Dynamics::Paper, ModelId::Ex2) => xi.tanh(),
            (Dynamics::Paper, ModelId::Ex3) => xi.exp(),
            (Dynamics::Paper, ModelId::Ex4) => (T::of(EX4_C) * xi).asinh(),
            (Dynamics::Paper, ModelId::Ex5) => g2(xi),
            _ => xi,
        }
    }

    pub(crate) fn to_latent(&self, x: T) -> T {
        match (&self.dynamics, self.id) {
            (Dynamics::Paper, ModelId::Ex2) => x.atanh(),
            (Dynamics::Paper, ModelId::Ex3) => x.ln(),
            (Dynamics::Paper, ModelId::Ex4) => x.sinh() / T::of(EX4_C),
            (Dynamics::Paper, ModelId::Ex5) => g2_inverse(x),
            _ => x,
        }
    }
}

pub(crate) enum Latent<T> {
    Euler { drift: ScalarFn<T>, diffusion: ScalarFn<T> },
    /// `dξ = −κ ξ dt + s dW`
    ExactOu { kappa: T, scale: T },
}

/// Closed-form `(b(x), σ(x))` of a benchmark model.
pub fn model_drift_sigma<T: Scalar>(id: ModelId, x: T) -> Result<(T, T)> {
    if id == ModelId::Custom {
        return Err(invalid("model", "custom models have no closed form"));
    }
    Ok(paper_drift_sigma(id, x))
}

fn paper_drift_sigma<T: Scalar>(id: ModelId, x: T) -> (T, T) {
    let one = T::one();
    let two = T::of(2.0);
    match id {
        ModelId::Ex1 => (-T::of(EX1_THETA) * x, T::of(EX1_GAMMA) * (one + x * x).sqrt()),
        ModelId::Ex2 => {
            let (r, g) = (T::of(EX2_R), T::of(EX2_GAMMA));
            let s = one - x * x;
            (s * (-r / two * x.atanh() - g * g / T::of(4.0) * x), g / two * s)
        }
        ModelId::Ex3 => {
            let (r, g) = (T::of(EX3_R), T::of(EX3_GAMMA));
            let xp = x.max(T::zero());
            let log = xp.max(T::of(LOG_FLOOR)).ln();
            (x * (-r / two * log + g * g / T::of(8.0)), g / two * xp)
        }
        ModelId::Ex4 => {
            let (theta, c) = (T::of(EX4_THETA), T::of(EX4_C));
            let (sh, ch) = (x.sinh(), x.cosh());
            (-(theta + c * c / (two * ch)) * sh / (ch * ch), c / ch)
        }
        ModelId::Ex5 => {
            let h = g2_inverse(x);
            let b = g2_prime(h) * alpha(T::of(EX5_THETA), T::of(EX5_C), h) + g2_second(h) / two;
            (b, g2_prime(h))
        }
        ModelId::Custom => unreachable!(),
    }
}

/// `α(x) = −θ x / √(1 + c² x²)`
fn alpha<T: Scalar>(theta: T, c: T, x: T) -> T {
    -theta * x / (T::one() + c * c * x * x).sqrt()
}

/// `G_2(y) = asinh(y − 5) + asinh(y + 5)`
pub(crate) fn g2<T: Scalar>(y: T) -> T {
    let s = T::of(EX5_SHIFT);
    (y - s).asinh() + (y + s).asinh()
}

fn g2_prime<T: Scalar>(y: T) -> T {
    let s = T::of(EX5_SHIFT);
    let one = T::one();
    let (u, v) = (y - s, y + s);
    (one + u * u).sqrt().recip() + (one + v * v).sqrt().recip()
}

fn g2_second<T: Scalar>(y: T) -> T {
    let s = T::of(EX5_SHIFT);
    let one = T::one();
    let (u, v) = (y - s, y + s);
    let p = T::of(1.5);
    -u / (one + u * u).powf(p) - v / (one + v * v).powf(p)
}

/// Closed form of `G_2^{-1}`; loses relative accuracy near 0 through
/// cancellation.
pub(crate) fn g2_inverse_closed<T: Scalar>(x: T) -> T {
    let one = T::one();
    let (sh, ch) = (x.sinh(), x.cosh());
    let inner = (T::of(49.0) + ch) * sh * sh + T::of(100.0) * (one - ch);
    inner.max(T::zero()).sqrt() / (T::of(2.0).sqrt() * sh)
}

/// `H = G_2^{-1}`, closed form polished by Newton steps; `H(0) = 0`.
pub(crate) fn g2_inverse<T: Scalar>(x: T) -> T {
    if x == T::zero() {
        return T::zero();
    }
    // G_2'(0) = 2/√26
    let mut y = if x.abs() < T::of(1e-3) { x * T::of(26f64.sqrt() / 2.0) } else { g2_inverse_closed(x) };
    for _ in 0..4 {
        let step = (g2(y) - x) / g2_prime(y);
        y -= step;
        if step.abs() <= T::epsilon() * y.abs().max(T::one()) {
            break;
        }
    }
    y
}
