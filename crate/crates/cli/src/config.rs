//! The single TOML config format shared by every subcommand.
//!
//! ```toml
//! model = ["ex1", "ex4"]
//! basis = "hermite"
//! n_paths = 100
//! horizon = 100.0
//! dt = 0.1
//! replicates = 25
//! correlation = { kind = "toeplitz", rho = [0.0, 0.5, 0.9] }
//! gate = { kind = "empirical" }
//! ```
//!
//! Every key is optional. Lists may be written as a single value.

use std::fs;
use std::path::Path;

use corrdrift::bench::{BasisChoice, CorrelationFamily, ExperimentConfig};
use corrdrift::estimator::{GateKind, GateSpec, DEFAULT_P};
use corrdrift::ModelId;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationName {
    Identity,
    Toeplitz,
    Tridiagonal,
    Equicorrelated,
    BlockToeplitz,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationSection {
    pub kind: CorrelationName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateName {
    Empirical,
    Truncation,
    Collection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateSection {
    pub kind: GateName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

/// Settings of the closed-form parametric risk check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricConfig {
    pub horizon: f64,
    pub sigma: f64,
    pub mu: f64,
    pub replicates: usize,
}

impl Default for ParametricConfig {
    fn default() -> Self {
        Self { horizon: 1.0, sigma: 1.0, mu: 1.0, replicates: 10_000 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
}

/// The file as written by a user; absent keys take documented defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<OneOrMany<ModelId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<OneOrMany<BasisChoice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mise_grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametric: Option<ParametricSection>,
}

/// A fully resolved, validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub parametric: ParametricConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { experiment: ExperimentConfig::default(), parametric: ParametricConfig::default() }
    }
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid `{key}`: {msg}"))
}

impl FileConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies defaults and validates.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(m) = &self.model {
            cfg.models = m.clone().into_vec();
        }
        if let Some(b) = &self.basis {
            cfg.bases = b.clone().into_vec();
        }
        if let Some(v) = self.n_paths {
            cfg.n_paths = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        if let Some(c) = &self.correlation {
            cfg.correlation = match c.kind {
                CorrelationName::Identity => CorrelationFamily::Identity,
                CorrelationName::Toeplitz => CorrelationFamily::Toeplitz,
                CorrelationName::Tridiagonal => CorrelationFamily::Tridiagonal,
                CorrelationName::Equicorrelated => CorrelationFamily::Equicorrelated,
                CorrelationName::BlockToeplitz => CorrelationFamily::BlockToeplitz {
                    block: c.block.ok_or_else(|| config_err("correlation.block", "required for block_toeplitz"))?,
                },
            };
            if c.block.is_some() && c.kind != CorrelationName::BlockToeplitz {
                return Err(config_err("correlation.block", "only meaningful for block_toeplitz"));
            }
            if let Some(r) = &c.rho {
                cfg.rhos = r.clone().into_vec();
            }
        }
        if let Some(v) = self.kappa {
            cfg.kappa = v;
        }
        cfg.m_max = self.m_max.or(cfg.m_max);
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.mise_grid {
            cfg.mise_grid = v;
        }
        if let Some(g) = &self.gate {
            let p = g.p.unwrap_or(DEFAULT_P);
            let kind = match g.kind {
                GateName::Empirical => {
                    if g.p.is_some() {
                        return Err(config_err("gate.p", "only used by the truncation and collection gates"));
                    }
                    GateKind::Empirical
                }
                GateName::Truncation => GateKind::Truncation { p },
                GateName::Collection => GateKind::Collection { p },
            };
            cfg.gate = GateSpec { kind, threshold_scale: g.scale.unwrap_or(1.0) };
        }
        cfg.x0 = self.x0.or(cfg.x0);
        let mut parametric = ParametricConfig::default();
        if let Some(p) = &self.parametric {
            parametric.horizon = p.horizon.unwrap_or(parametric.horizon);
            parametric.sigma = p.sigma.unwrap_or(parametric.sigma);
            parametric.mu = p.mu.unwrap_or(parametric.mu);
            parametric.replicates = p.replicates.unwrap_or(parametric.replicates);
        }
        let run = RunConfig { experiment: cfg, parametric };
        run.validate()?;
        Ok(run)
    }
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        let cfg = &self.experiment;
        if matches!(cfg.correlation, CorrelationFamily::Toeplitz | CorrelationFamily::BlockToeplitz { .. }) {
            if let Some(rho) = cfg.rhos.iter().find(|r| !(r.abs() < 1.0)) {
                return Err(config_err("correlation.rho", format!("rho must lie in (−1,1), got {rho}")));
            }
        }
        if cfg.models.contains(&ModelId::Custom) {
            return Err(config_err("model", "custom models cannot be configured from a file"));
        }
        let p = &self.parametric;
        if !(p.horizon > 0.0) || !(p.sigma > 0.0) || p.replicates == 0 {
            return Err(config_err("parametric", "horizon, sigma and replicates must be positive"));
        }
        cfg.validate().map_err(|e| match e {
            corrdrift::Error::InvalidParameter { name, reason } => config_err(name, reason),
            other => CliError::from(other),
        })
    }

    /// The inverse of [`FileConfig::resolve`], with every key spelled out.
    pub fn to_file(&self) -> FileConfig {
        let cfg = &self.experiment;
        let (kind, block) = match cfg.correlation {
            CorrelationFamily::Identity => (CorrelationName::Identity, None),
            CorrelationFamily::Toeplitz => (CorrelationName::Toeplitz, None),
            CorrelationFamily::Tridiagonal => (CorrelationName::Tridiagonal, None),
            CorrelationFamily::Equicorrelated => (CorrelationName::Equicorrelated, None),
            CorrelationFamily::BlockToeplitz { block } => (CorrelationName::BlockToeplitz, Some(block)),
        };
        let gate = match cfg.gate.kind {
            GateKind::Empirical => GateSection { kind: GateName::Empirical, p: None, scale: Some(cfg.gate.threshold_scale) },
            GateKind::Truncation { p } => {
                GateSection { kind: GateName::Truncation, p: Some(p), scale: Some(cfg.gate.threshold_scale) }
            }
            GateKind::Collection { p } => {
                GateSection { kind: GateName::Collection, p: Some(p), scale: Some(cfg.gate.threshold_scale) }
            }
        };
        FileConfig {
            model: Some(OneOrMany::Many(cfg.models.clone())),
            basis: Some(OneOrMany::Many(cfg.bases.clone())),
            n_paths: Some(cfg.n_paths),
            horizon: Some(cfg.horizon),
            dt: Some(cfg.dt),
            replicates: Some(cfg.replicates),
            correlation: Some(CorrelationSection { kind, rho: Some(OneOrMany::Many(cfg.rhos.clone())), block }),
            kappa: Some(cfg.kappa),
            m_max: cfg.m_max,
            seed: Some(cfg.seed),
            mise_grid: Some(cfg.mise_grid),
            gate: Some(gate),
            x0: cfg.x0,
            parametric: Some(ParametricSection {
                horizon: Some(self.parametric.horizon),
                sigma: Some(self.parametric.sigma),
                mu: Some(self.parametric.mu),
                replicates: Some(self.parametric.replicates),
            }),
        }
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    FileConfig::from_toml(&text)?.resolve()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let run = FileConfig::from_toml("model = \"ex1\"\nbasis = \"hermite\"\n").unwrap().resolve().unwrap();
        let cfg = run.experiment;
        assert_eq!((cfg.n_paths, cfg.horizon, cfg.dt), (100, 100.0, 0.1));
        assert_eq!(cfg.rhos, vec![0.0]);
        assert_eq!(cfg.kappa, 2.0);
        assert_eq!(cfg.mise_grid, 500);
        assert_eq!(cfg.gate, GateSpec::default());
    }

    #[test]
    fn rho_out_of_range_names_the_key() {
        let err = FileConfig::from_toml("correlation = { kind = \"toeplitz\", rho = 1.5 }").unwrap().resolve().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rho must lie in (−1,1)"), "{msg}");
        assert!(msg.contains("correlation.rho"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = FileConfig::from_toml("modle = \"ex1\"").unwrap_err().to_string();
        assert!(err.contains("modle"), "{err}");
    }

    #[test]
    fn scalar_and_list_forms_agree() {
        let a = FileConfig::from_toml("correlation = { kind = \"toeplitz\", rho = 0.5 }").unwrap().resolve().unwrap();
        let b = FileConfig::from_toml("correlation = { kind = \"toeplitz\", rho = [0.5] }").unwrap().resolve().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn theoretical_gate_defaults_p() {
        let run = FileConfig::from_toml("gate = { kind = \"truncation\" }").unwrap().resolve().unwrap();
        assert_eq!(run.experiment.gate.kind, GateKind::Truncation { p: 12.0 });
        assert!(FileConfig::from_toml("gate = { kind = \"collection\", p = 4 }").unwrap().resolve().is_err());
    }
}
