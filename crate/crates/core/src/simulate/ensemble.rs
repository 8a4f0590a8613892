//! Discretised trajectories `X^i_{kΔ}` and their on-disk formats.
//!
//! Binary layout (little endian): 8-byte magic `CDRIFTE1`, `N: u64`,
//! `n_steps: u64`, `dt: f64`, `seed: u64`, then `N × (n_steps + 1)` `f64`
//! values in row-major order (one row per path).

use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::simulate::model::ModelId;

pub const MAGIC: &[u8; 8] = b"CDRIFTE1";

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T> {
    values: Matrix<T>,
    dt: T,
    seed: u64,
    model: ModelId,
    correlation: String,
}

impl<T: Scalar> PathEnsemble<T> {
    /// Wraps an `N × (n_steps + 1)` matrix of states.
    pub fn new(values: Matrix<T>, dt: T, seed: u64, model: ModelId, correlation: impl Into<String>) -> Result<Self> {
        if values.rows() == 0 {
            return Err(invalid("ensemble", "needs at least one path"));
        }
        if values.cols() < 2 {
            return Err(invalid("ensemble", "needs at least one time step"));
        }
        if !(dt > T::zero() && dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if let Some(i) = (0..values.rows()).find(|&i| values.row(i).iter().any(|v| !v.is_finite())) {
            let step = values.row(i).iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(Error::NonFiniteState { path: i, step });
        }
        Ok(Self { values, dt, seed, model, correlation: correlation.into() })
    }

    pub fn n_paths(&self) -> usize {
        self.values.rows()
    }

    pub fn n_steps(&self) -> usize {
        self.values.cols() - 1
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// `T = n_steps · Δ`
    pub fn horizon(&self) -> T {
        self.dt * T::of_usize(self.n_steps())
    }

    /// `N · T`, the normalisation of every empirical quantity.
    pub fn total_time(&self) -> T {
        self.horizon() * T::of_usize(self.n_paths())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> ModelId {
        self.model
    }

    pub fn correlation(&self) -> &str {
        &self.correlation
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn path(&self, i: usize) -> &[T] {
        self.values.row(i)
    }

    pub fn paths(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.n_paths()).map(move |i| self.values.row(i))
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n_paths() as u64).to_le_bytes())?;
        w.write_all(&(self.n_steps() as u64).to_le_bytes())?;
        w.write_all(&self.dt.as_f64().to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.values.cols());
        for row in self.paths() {
            buf.clear();
            for v in row {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads the binary format; model and correlation provenance are not
    /// stored and come back as `Custom` / `"unknown"`.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let steps = u64::from_le_bytes(next(&mut r)?) as usize;
        let dt = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let len = n
            .checked_mul(steps + 1)
            .ok_or_else(|| Error::Format("header sizes overflow".into()))?;
        let mut raw = vec![0u8; len * 8];
        r.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        let values = Matrix::from_vec(n, steps + 1, data)?;
        Self::new(values, T::of(dt), seed, ModelId::Custom, "unknown")
    }

    /// Long-format CSV: `path,step,time,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "path,step,time,value")?;
        for (i, row) in self.paths().enumerate() {
            for (k, v) in row.iter().enumerate() {
                let t = self.dt.as_f64() * k as f64;
                writeln!(w, "{i},{k},{t:?},{:?}", v.as_f64())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let values = Matrix::from_fn(3, 5, |i, k| (i as f64) - 0.25 * k as f64);
        let ens = PathEnsemble::new(values, 0.1, 77, ModelId::Ex1, "identity").unwrap();
        let mut bytes = Vec::new();
        ens.write_binary(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 40 + 15 * 8);
        let back = PathEnsemble::<f64>::read_binary(bytes.as_slice()).unwrap();
        assert_eq!(back.values(), ens.values());
        assert_eq!((back.dt(), back.seed()), (0.1, 77));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PathEnsemble::<f64>::read_binary(&b"NOTMAGIC"[..]).is_err());
        let mut bytes = Vec::new();
        let ens = PathEnsemble::new(Matrix::from_fn(2, 3, |_, _| 1.0), 0.5, 1, ModelId::Ex1, "").unwrap();
        ens.write_binary(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(PathEnsemble::<f64>::read_binary(bytes.as_slice()), Err(Error::Format(_))));

        let bad = Matrix::from_fn(2, 3, |i, k| if i == 1 && k == 2 { f64::NAN } else { 0.0 });
        assert_eq!(
            PathEnsemble::new(bad, 0.1, 0, ModelId::Ex1, "").unwrap_err(),
            Error::NonFiniteState { path: 1, step: 2 }
        );
    }

    #[test]
    fn csv_has_header_and_rows() {
        let ens = PathEnsemble::new(Matrix::from_fn(2, 2, |i, _| i as f64), 0.5, 1, ModelId::Ex1, "").unwrap();
        let mut out = Vec::new();
        ens.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "path,step,time,value");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "1,1,0.5,1.0");
    }
}
