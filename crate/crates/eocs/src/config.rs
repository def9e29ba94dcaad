//! TOML run configuration: case selection, renewable replacement, solver
//! tolerances, search knobs, model shape, training and metric parameters.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fault::FaultConfig;
use crate::grid::{apply_replacement, load_case, GridModel, RenewableKind, ReplacementParams};
use crate::nn::{Aggregator, TrainConfig};
use crate::search::GaParams;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CaseConfig {
    pub path: PathBuf,
}

/// Which synchronous generators are converted to renewables at load time.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplacementConfig {
    pub buses: Vec<usize>,
    pub kind: RenewableKind,
    pub m: f64,
    pub i_n: Option<f64>,
    pub i_lim_factor: Option<f64>,
}

impl Default for ReplacementConfig {
    fn default() -> Self {
        ReplacementConfig {
            buses: Vec::new(),
            kind: RenewableKind::Fips,
            m: 1.0,
            i_n: None,
            i_lim_factor: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub levels: usize,
    pub ga: GaParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { levels: 3, ga: GaParams::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden feature dimension d; defaults to the bus count.
    pub d: Option<usize>,
    pub aggregator: Aggregator,
    /// Explicit MLP hidden widths; defaults to a geometric ladder.
    pub mlp_hidden: Option<Vec<usize>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d: None, aggregator: Aggregator::Mean, mlp_hidden: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub k: usize,
    pub outage_min: usize,
    pub outage_max: usize,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { k: 2, outage_min: 0, outage_max: 2, train: 10_000, test: 2_000, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Reliability coefficient of the selectivity criterion.
    pub k_reliability: f64,
    /// Relative tolerances for the banded current-accuracy metrics.
    pub e_values: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { k_reliability: 1.2, e_values: vec![0.01, 0.05] }
    }
}

/// Whole run configuration; every section has working defaults.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub case: CaseConfig,
    pub replacement: ReplacementConfig,
    pub fault_solver: FaultConfig,
    pub search: SearchConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub metrics: MetricsConfig,
}

impl RunConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(&path)?;
        let mut cfg: RunConfig = toml::from_str(&text)?;
        // case paths are relative to the config file location
        if cfg.case.path.is_relative() {
            if let Some(dir) = path.as_ref().parent() {
                cfg.case.path = dir.join(&cfg.case.path);
            }
        }
        Ok(cfg)
    }

    /// Load the case file and apply the configured replacement.
    pub fn load_grid(&self) -> Result<GridModel, ConfigError> {
        let grid = load_case(&self.case.path)?;
        if self.replacement.buses.is_empty() {
            return Ok(grid);
        }
        let params = ReplacementParams {
            i_n: self.replacement.i_n,
            m: self.replacement.m,
            i_lim_factor: self.replacement.i_lim_factor,
        };
        Ok(apply_replacement(&grid, &self.replacement.buses, self.replacement.kind, &params)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing;

    #[test]
    fn defaults_match_documented_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.fault_solver.tol, 1e-6);
        assert_eq!(cfg.fault_solver.max_iter, 50);
        assert_eq!(cfg.fault_solver.damping_after, 25);
        assert_eq!(cfg.fault_solver.fault_admittance, 1e6);
        assert_eq!(cfg.fault_solver.n_levels, 3);
        assert_eq!(cfg.search.levels, 3);
        assert_eq!(cfg.search.ga.population, 50);
        assert_eq!(cfg.metrics.k_reliability, 1.2);
        assert_eq!(cfg.metrics.e_values, vec![0.01, 0.05]);
    }

    #[test]
    fn shipped_configs_parse_and_load() {
        for name in ["ieee39.toml", "ieee118.toml"] {
            let path = testing::workspace_path("configs").join(name);
            let cfg = RunConfig::from_path(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
            let grid = cfg.load_grid().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!grid.renewables.is_empty(), "{name} should replace generators");
        }
    }

    #[test]
    fn fault_section_accepts_spec_key_names() {
        let text = r#"
            [fault_solver]
            tol = 1e-7
            max_iter = 40
            damping_after = 20
            M = 5e5
            n_levels = 2
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.fault_solver.tol, 1e-7);
        assert_eq!(cfg.fault_solver.fault_admittance, 5e5);
        assert_eq!(cfg.fault_solver.n_levels, 2);
    }
}
