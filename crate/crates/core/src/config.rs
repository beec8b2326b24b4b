//! Run configuration: one JSON document with a section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baselines::BaselineConfig;
use crate::env::{EnvConfig, EnvError};
use crate::evalbench::StepMetricConfig;
use crate::plant::{PlantError, PlantParams};
use crate::sac::SacConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Episodes per benchmark case.
    pub episodes: usize,
    /// Seeds the per-episode environment streams shared by all controllers.
    pub master_seed: u64,
    pub step_metrics: StepMetricConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            master_seed: 2024,
            step_metrics: StepMetricConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub baselines: BaselineConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            env: EnvConfig::default(),
            sac: SacConfig::default(),
            baselines: BaselineConfig::default(),
            eval: EvalConfig::default(),
            seeds: vec![42, 43, 44],
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config field `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plant.validate().map_err(|e| match e {
            PlantError::InvalidParams { name, reason } => {
                ConfigError::invalid(&format!("plant.{name}"), reason)
            }
            other => ConfigError::invalid("plant", other.to_string()),
        })?;
        self.env.validate().map_err(|e| match e {
            EnvError::InvalidConfig(msg) => {
                let field = msg.split_whitespace().next().unwrap_or("");
                ConfigError::invalid(&format!("env.{field}"), msg.clone())
            }
            other => ConfigError::invalid("env", other.to_string()),
        })?;
        self.sac
            .validate()
            .map_err(|msg| ConfigError::invalid("sac", msg))?;
        self.baselines
            .validate()
            .map_err(|e| ConfigError::invalid("baselines", e.to_string()))?;
        if self.eval.episodes == 0 {
            return Err(ConfigError::invalid("eval.episodes", "must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    /// Canonical compact JSON, the input to [`RunConfig::hash`].
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON with the output directory blanked, so
    /// moving a run elsewhere keeps its hash.
    pub fn hash(&self) -> [u8; 32] {
        let placed_anywhere = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        Sha256::digest(placed_anywhere.canonical_json().as_bytes()).into()
    }

    pub fn hash_hex(&self) -> String {
        hex_string(&self.hash())
    }

    /// Write the pretty-printed config into `dir`.
    pub fn echo_to(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse and validate a JSON document. Missing fields take their defaults.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Schema {
            field: if path == "." { String::new() } else { path },
            message: e.into_inner().to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_config_str(&text)
}
