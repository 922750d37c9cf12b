use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Variant};
use crate::bandit::{build_bandit_tile, BanditTileConfig};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::par::Execution;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    /// Defaults to the standard bandit tile when no MDP file is given.
    pub bandit_tile: Option<BanditTileConfig>,
    /// JSON MDP file; relative paths resolve against the config file.
    pub mdp_file: Option<PathBuf>,
    /// Probability of repeating the previous action.
    pub sticky_zeta: f64,
}

impl EnvironmentConfig {
    pub fn build(&self) -> Result<TabularMdp> {
        let base = match (&self.bandit_tile, &self.mdp_file) {
            (Some(_), Some(_)) => return Err(Error::InvalidConfig("set either bandit_tile or mdp_file, not both".into())),
            (_, Some(path)) => TabularMdp::load(path)?,
            (tile, None) => build_bandit_tile(&tile.clone().unwrap_or_default())?,
        };
        if self.sticky_zeta == 0.0 {
            Ok(base)
        } else {
            base.sticky_wrap(self.sticky_zeta)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Overrides `agent.variant` when set.
    pub variant: Option<Variant>,
    pub environment: EnvironmentConfig,
    pub agent: AgentConfig,
    /// Environment steps summed over all actors.
    pub total_timesteps: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Updates between metrics rows.
    pub log_every: u64,
    /// Episodes in the trailing reward average.
    pub moving_average_window: usize,
    pub execution: Execution,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: None,
            environment: EnvironmentConfig::default(),
            agent: AgentConfig::default(),
            total_timesteps: 1_000_000,
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("runs"),
            log_every: 1,
            moving_average_window: 100,
            execution: Execution::Parallel,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` after setting each `(key, value)` pair. Keys are dotted
    /// paths (`agent.rnd.learning_rate`); a bare name that is not a top-level
    /// field addresses `agent`. Values are TOML literals.
    pub fn from_toml_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        for (key, value) in overrides {
            set_dotted(&mut table, key, value)?;
        }
        let mut cfg: ExperimentConfig = table.try_into()?;
        cfg.resolve_variant();
        Ok(cfg)
    }

    /// Parses the file and resolves a relative `mdp_file` against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    pub fn load_with_overrides(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_with_overrides(&std::fs::read_to_string(path)?, overrides)?;
        if let Some(file) = &cfg.environment.mdp_file {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.environment.mdp_file = Some(base.join(file));
            }
        }
        Ok(cfg)
    }

    fn resolve_variant(&mut self) {
        if let Some(v) = self.variant {
            self.agent.variant = v;
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = Some(variant);
        self.agent.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if let Some(v) = self.variant {
            if v != self.agent.variant {
                return Err(Error::InvalidConfig("variant and agent.variant disagree".into()));
            }
        }
        if self.total_timesteps < self.agent.batch_size() as u64 {
            return Err(Error::InvalidConfig(format!(
                "total_timesteps {} is smaller than one batch of {} steps",
                self.total_timesteps,
                self.agent.batch_size()
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if self.log_every == 0 || self.moving_average_window == 0 {
            return Err(Error::InvalidConfig("log_every and moving_average_window must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.environment.sticky_zeta) {
            return Err(Error::InvalidConfig("sticky_zeta must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Whole batches that fit in the budget.
    pub fn num_updates(&self) -> u64 {
        self.total_timesteps / self.agent.batch_size() as u64
    }
}

const TOP_LEVEL: [&str; 9] =
    ["variant", "environment", "agent", "total_timesteps", "seeds", "output_dir", "log_every", "moving_average_window", "execution"];

fn set_dotted(table: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::InvalidConfig(format!("malformed key `{key}`")));
    }
    if !TOP_LEVEL.contains(&parts[0]) {
        parts.insert(0, "agent");
    }
    let parsed: toml::Table = toml::from_str(&format!("v = {value}"))
        .or_else(|_| toml::from_str(&format!("v = {}", toml::Value::String(value.to_string()))))?;
    let leaf = parsed["v"].clone();
    let (last, path) = parts.split_last().expect("non-empty key");
    let mut node = table;
    for part in path {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| Error::InvalidConfig(format!("`{part}` in `{key}` is not a section")))?;
    }
    node.insert(last.to_string(), leaf);
    Ok(())
}
