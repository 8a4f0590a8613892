//! Orthonormal function systems used for projection: a cosine family on a
//! compact interval and the Hermite functions on the real line.
//!
//! Indices are 1-based: `φ_1, …, φ_m` span the `m`-th approximation space,
//! and the spaces are nested in `m`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Half-width of the window on which `L(m)` is maximised for the Hermite
/// family.
pub const HERMITE_SUP_WINDOW: f64 = 12.0;
pub const DEFAULT_L_GRID: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum BasisFamily<T> {
    /// `φ_1 = (b−a)^{-1/2}`, `φ_j = (2/(b−a))^{1/2} cos(π(j−1)(x−a)/(b−a))`,
    /// all vanishing outside `[a, b]`.
    Cosine { a: T, b: T },
    /// Hermite functions `φ_j = c_{j−1} H_{j−1}(x) e^{−x²/2}`.
    Hermite,
}

impl<T> BasisFamily<T> {
    pub fn name(&self) -> &'static str {
        match self {
            BasisFamily::Cosine { .. } => "cosine",
            BasisFamily::Hermite => "hermite",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Basis<T> {
    family: BasisFamily<T>,
    m_max: usize,
}

impl<T: Scalar> Basis<T> {
    pub fn cosine(a: T, b: T, m_max: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(invalid("support", format!("need finite a < b, got [{a}, {b}]")));
        }
        Self::new(BasisFamily::Cosine { a, b }, m_max)
    }

    pub fn hermite(m_max: usize) -> Result<Self> {
        Self::new(BasisFamily::Hermite, m_max)
    }

    pub fn new(family: BasisFamily<T>, m_max: usize) -> Result<Self> {
        if m_max == 0 {
            return Err(invalid("m_max", "must be at least 1"));
        }
        if let BasisFamily::Cosine { a, b } = family {
            if !(b > a) {
                return Err(invalid("support", "need a < b"));
            }
        }
        Ok(Self { family, m_max })
    }

    pub fn family(&self) -> &BasisFamily<T> {
        &self.family
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    /// Same family with a different largest dimension.
    pub fn with_m_max(&self, m_max: usize) -> Result<Self> {
        Self::new(self.family, m_max)
    }

    /// Interval over which `L(m)` is maximised: the support for the cosine
    /// family, `[-12, 12]` for Hermite.
    pub fn sup_window(&self) -> (T, T) {
        match self.family {
            BasisFamily::Cosine { a, b } => (a, b),
            BasisFamily::Hermite => (T::of(-HERMITE_SUP_WINDOW), T::of(HERMITE_SUP_WINDOW)),
        }
    }

    fn check_dim(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.m_max {
            Err(Error::IndexOutOfRange { index: j, max: self.m_max })
        } else {
            Ok(())
        }
    }

    /// `φ_j(x)` for `1 ≤ j ≤ m_max`.
    pub fn eval(&self, j: usize, x: T) -> Result<T> {
        self.check_dim(j)?;
        Ok(match self.family {
            BasisFamily::Cosine { a, b } => cosine_one(a, b, j, x),
            BasisFamily::Hermite => {
                let mut buf = vec![T::zero(); j];
                hermite_fill(x, &mut buf);
                buf[j - 1]
            }
        })
    }

    /// `(φ_1(x), …, φ_m(x))`.
    pub fn eval_all(&self, m: usize, x: T) -> Result<Vec<T>> {
        self.check_dim(m)?;
        let mut out = vec![T::zero(); m];
        self.fill(x, &mut out);
        Ok(out)
    }

    /// Writes `φ_1(x), …, φ_{out.len()}(x)` into `out` without bounds checks
    /// against `m_max`.
    pub(crate) fn fill(&self, x: T, out: &mut [T]) {
        match self.family {
            BasisFamily::Cosine { a, b } => cosine_fill(a, b, x, out),
            BasisFamily::Hermite => hermite_fill(x, out),
        }
    }

    /// Evaluates `Σ_j θ_j φ_j(x)`.
    pub fn combine(&self, theta: &[T], x: T) -> T {
        if theta.is_empty() {
            return T::zero();
        }
        let mut buf = vec![T::zero(); theta.len()];
        self.fill(x, &mut buf);
        buf.iter().zip(theta).map(|(&p, &t)| p * t).sum()
    }

    /// Grid lower bound on `L(m) = 1 ∨ sup_x Σ_{j≤m} φ_j(x)²`.
    pub fn l_of_m(&self, m: usize, grid_n: usize) -> Result<T> {
        self.check_dim(m)?;
        if grid_n < 2 {
            return Err(invalid("grid_n", "need at least two grid points"));
        }
        let (lo, hi) = self.sup_window();
        let step = (hi - lo) / T::of_usize(grid_n - 1);
        let mut buf = vec![T::zero(); m];
        let mut best = T::one();
        for k in 0..grid_n {
            let x = if k + 1 == grid_n { hi } else { lo + step * T::of_usize(k) };
            self.fill(x, &mut buf);
            let s: T = buf.iter().map(|&v| v * v).sum();
            best = best.max(s);
        }
        Ok(best)
    }

    /// `𝔠_φ² = max(1, max_{m ≤ m_max} L(m)/m)`, the constant in `L(m) ≤ 𝔠_φ² m`.
    pub fn sup_norm_constant(&self, grid_n: usize) -> Result<T> {
        let mut c = T::one();
        for m in 1..=self.m_max {
            c = c.max(self.l_of_m(m, grid_n)? / T::of_usize(m));
        }
        Ok(c)
    }
}

#[inline]
fn cosine_one<T: Scalar>(a: T, b: T, j: usize, x: T) -> T {
    if x < a || x > b {
        return T::zero();
    }
    let len = b - a;
    if j == 1 {
        return len.sqrt().recip();
    }
    let freq = T::PI() * T::of_usize(j - 1);
    (T::of(2.0) / len).sqrt() * (freq * (x - a) / len).cos()
}

fn cosine_fill<T: Scalar>(a: T, b: T, x: T, out: &mut [T]) {
    if x < a || x > b || x.is_nan() {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let len = b - a;
    let amp = (T::of(2.0) / len).sqrt();
    let angle = T::PI() * (x - a) / len;
    for (k, v) in out.iter_mut().enumerate() {
        *v = if k == 0 { len.sqrt().recip() } else { amp * (angle * T::of_usize(k)).cos() };
    }
}

/// Normalised three-term recurrence
/// `φ_{n+1} = x √(2/(n+1)) φ_n − √(n/(n+1)) φ_{n−1}` (0-based `n`).
fn hermite_fill<T: Scalar>(x: T, out: &mut [T]) {
    if out.is_empty() {
        return;
    }
    let two = T::of(2.0);
    let p0 = T::PI().powf(T::of(-0.25)) * (-x * x / two).exp();
    out[0] = p0;
    if out.len() == 1 {
        return;
    }
    out[1] = two.sqrt() * x * p0;
    for n in 1..out.len() - 1 {
        let nf = T::of_usize(n);
        let np1 = T::of_usize(n + 1);
        out[n + 1] = x * (two / np1).sqrt() * out[n] - (nf / np1).sqrt() * out[n - 1];
    }
}
