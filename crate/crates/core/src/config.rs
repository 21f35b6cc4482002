//! Run configuration read from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{CostDistribution, DistSpec};
use crate::error::{Error, Result};
use crate::history::MAX_N;
use crate::sim::SimConfig;

/// Either an explicit list of α values or an evenly spaced range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaGrid {
    List(Vec<f64>),
    Range(AlphaRange),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaRange {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl AlphaGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            AlphaGrid::List(v) => v.clone(),
            AlphaGrid::Range(r) if r.points == 1 => vec![r.start],
            AlphaGrid::Range(r) => (0..r.points)
                .map(|i| r.start + (r.stop - r.start) * i as f64 / (r.points - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub grid_points: usize,
    pub refine_rounds: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { grid_points: 201, refine_rounds: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImproveConfig {
    /// Absolute ε; overrides `epsilon_fraction`.
    pub epsilon: Option<f64>,
    /// ε as a fraction of its upper bound.
    pub epsilon_fraction: f64,
    /// Paths for the confirming simulation (0 skips it).
    pub n_paths: usize,
}

impl Default for ImproveConfig {
    fn default() -> Self {
        Self { epsilon: None, epsilon_fraction: 0.5, n_paths: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub alpha_grid: Option<AlphaGrid>,
    /// Worker threads; `SCREENLAB_THREADS` takes precedence.
    #[serde(default)]
    pub threads: Option<usize>,
    pub distribution: DistSpec,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub improve: ImproveConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks that do not depend on the subcommand.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > MAX_N {
            return Err(Error::Config(format!("N must be in 1..={MAX_N}, got {}", self.n)));
        }
        if let Some(a) = self.alpha {
            if !a.is_finite() {
                return Err(Error::Config(format!("alpha must be finite, got {a}")));
            }
        }
        if let Some(g) = &self.alpha_grid {
            let v = g.values();
            if v.is_empty() || v.iter().any(|a| !a.is_finite()) {
                return Err(Error::Config("alpha_grid must be a nonempty list of finite values".into()));
            }
            if let AlphaGrid::Range(r) = g {
                if r.points == 0 || r.stop < r.start {
                    return Err(Error::Config("alpha_grid range needs points >= 1 and stop >= start".into()));
                }
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.sim.n_paths == 0 {
            return Err(Error::Config("sim.n_paths must be at least 1".into()));
        }
        if self.oracle.grid_points < 2 {
            return Err(Error::Config("oracle.grid_points must be at least 2".into()));
        }
        let f = self.improve.epsilon_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("improve.epsilon_fraction must be in (0, 1], got {f}")));
        }
        CostDistribution::from_spec(&self.distribution).map_err(|e| Error::Config(format!("distribution: {e}")))?;
        Ok(())
    }

    pub fn distribution(&self) -> Result<CostDistribution> {
        CostDistribution::from_spec(&self.distribution).map_err(|e| Error::Config(format!("distribution: {e}")))
    }

    pub fn require_alpha(&self) -> Result<f64> {
        self.alpha.ok_or_else(|| Error::Config("this command needs `alpha`".into()))
    }

    pub fn require_alpha_grid(&self) -> Result<Vec<f64>> {
        self.alpha_grid
            .as_ref()
            .map(AlphaGrid::values)
            .ok_or_else(|| Error::Config("this command needs `alpha_grid`".into()))
    }
}
