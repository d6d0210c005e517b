//! TOML run configuration.

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::path::Path;
use thmm::emissions::Family;
use thmm::fit::InitStrategy;
use thmm::path_grid::DEFAULT_GRID_POINTS;

/// Raised for unreadable or invalid configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub data: DataSection,
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub fit: FitSection,
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Gaussian smoothing bandwidth applied to every path before fitting.
    pub bandwidth: Option<f64>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            grid_points: DEFAULT_GRID_POINTS,
            bandwidth: None,
        }
    }
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub p: usize,
    pub hurst: Option<f64>,
    /// Sobolev order (1 or 2) of the nonparametric family.
    pub order: Option<u8>,
    /// Shared precision matrix of the Euclidean family.
    pub precision: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default = "default_init")]
    pub init: InitStrategy,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection {
            init: default_init(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            restarts: default_restarts(),
            seed: 0,
        }
    }
}

fn default_init() -> InitStrategy {
    InitStrategy::Kmeans
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    500
}

fn default_restarts() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Process {
    Bm,
    Ou,
    Fbm,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub process: Process,
    pub n_obs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Initial distribution; uniform when absent.
    pub eta: Option<Vec<f64>>,
    /// Full transition matrix; alternatively `stay` builds a matrix with
    /// that diagonal and the rest spread evenly.
    pub trans: Option<Vec<Vec<f64>>>,
    pub stay: Option<f64>,
    pub drifts: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
    pub hurst: Option<f64>,
}

/// Parses configuration text; errors name the offending key path.
pub fn parse(text: &str) -> Result<Config> {
    let de = toml::de::Deserializer::parse(text).map_err(|e| ConfigError(format!("invalid TOML: {e}")))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError(format!("config key '{path}': {}", e.inner().message())).into()
    })
}

pub fn load(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

impl SimulateSection {
    pub fn n_states(&self) -> Result<usize> {
        let n = match self.process {
            Process::Bm | Process::Fbm => self.required(&self.drifts, "drifts")?.len(),
            Process::Ou => {
                let mu = self.required(&self.mu, "mu")?;
                if self.required(&self.c, "c")?.len() != mu.len() {
                    bail!(ConfigError("config key 'simulate.c': length differs from 'simulate.mu'".into()));
                }
                mu.len()
            }
        };
        if n == 0 {
            bail!(ConfigError("config section 'simulate' needs at least one state".into()));
        }
        Ok(n)
    }

    pub fn required<'a, T>(&self, v: &'a Option<T>, key: &str) -> Result<&'a T> {
        v.as_ref().ok_or_else(|| {
            ConfigError(format!("config key 'simulate.{key}' is required for this process")).into()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply() {
        let c = parse("[model]\nfamily = \"bm\"\np = 3\n").unwrap();
        assert_eq!(c.data.grid_points, 201);
        assert_eq!(c.fit.max_iter, 500);
        assert_eq!(c.model.unwrap().family, Family::BmDrift);
    }

    #[test]
    fn unknown_keys_are_reported_with_their_path() {
        let err = parse("[fit]\ntoll = 1e-3\n").unwrap_err().to_string();
        assert!(err.contains("fit.toll"), "{err}");
        let err = parse("[model]\nfamily = \"gauss\"\np = 2\n").unwrap_err().to_string();
        assert!(err.contains("model.family"), "{err}");
    }
}
