//! Run configuration: a TOML file merged over the documented defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use forge_core::dataset::DatasetConfig;
use forge_core::lang::Limits;
use forge_core::policy::TrainConfig;
use forge_core::sim::WorkspaceConfig;

use crate::llm::LlmConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Population size N.
    pub population: usize,
    /// Stage I generations.
    pub g1: usize,
    /// Stage II refinement rounds.
    pub g2: usize,
    /// Stage III refinement rounds.
    pub g3: usize,
    /// Stage II evaluation episodes.
    pub e2: usize,
    /// Stage III evaluation episodes, split evenly over `human_counts`.
    pub e3: usize,
    pub human_counts: Vec<usize>,
    pub reflection_cap: usize,
    pub limits: Limits,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            population: 8,
            g1: 10,
            g2: 16,
            g3: 3,
            e2: 50,
            e3: 500,
            human_counts: vec![5, 10, 15, 20],
            reflection_cap: 8,
            limits: Limits::default(),
        }
    }
}

/// Per-1k-token prices; absent prices leave costs unreported.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingConfig {
    pub prompt_per_1k: Option<f64>,
    pub completion_per_1k: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: String,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub env: WorkspaceConfig,
    pub dataset: DatasetConfig,
    pub search: SearchConfig,
    pub proxy: TrainConfig,
    pub full: TrainConfig,
    pub llm: LlmConfig,
    pub pricing: PricingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "runs/default".into(),
            workers: 0,
            env: WorkspaceConfig::default(),
            dataset: DatasetConfig::default(),
            search: SearchConfig::default(),
            proxy: TrainConfig::proxy(8000, 0),
            full: TrainConfig::full(10_000_000, 0),
            llm: LlmConfig::default(),
            pricing: PricingConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

/// Overlays `over` onto `base`, table by table.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses TOML text over the defaults; unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut merged = toml::Value::try_from(RunConfig::default()).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| invalid("env", e.to_string()))?;
        self.dataset.validate().map_err(|e| invalid("dataset", e.to_string()))?;
        self.proxy.validate().map_err(|e| invalid("proxy", e.to_string()))?;
        self.full.validate().map_err(|e| invalid("full", e.to_string()))?;
        self.llm.validate().map_err(|e| invalid("llm", e))?;
        let s = &self.search;
        if s.population < 1 {
            return Err(invalid("search.population", "N must be >= 1"));
        }
        if s.e2 < 1 {
            return Err(invalid("search.e2", "must be >= 1"));
        }
        if s.human_counts.is_empty() {
            return Err(invalid("search.human_counts", "must list at least one count"));
        }
        if s.e3 < s.human_counts.len() {
            return Err(invalid("search.e3", "must give each human count at least one episode"));
        }
        if let Some(&h) = s.human_counts.iter().find(|&&h| h > forge_core::sim::MAX_HUMANS) {
            return Err(invalid("search.human_counts", format!("{h} exceeds the 20-human cap")));
        }
        if s.reflection_cap < 1 {
            return Err(invalid("search.reflection_cap", "must be >= 1"));
        }
        if s.limits.max_nodes < 1 {
            return Err(invalid("search.limits.max_nodes", "must be >= 1"));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    RunConfig::from_toml(&text)
}
