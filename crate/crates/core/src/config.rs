//! Run configuration: a flat TOML file of `key = value` pairs. Every key is
//! optional; command-line flags override file values.
//!
//! ```toml
//! model = "gpt-3.5-turbo"
//! seed = 13
//! rrs_probability = 0.3
//! tweets_per_target = 2
//! targets_per_rule = 3
//! text_style = "tweet"        # or "paragraph"
//! filter_disagreements = false
//! min_tokens = 5
//! dev_frac = 0.15
//! max_retries = 3
//! base_backoff_ms = 1000
//! concurrency = 4
//! cache_dir = "cache"
//! ```

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{AugmentConfig, DEFAULT_MIN_TOKENS};
use crate::llm::{GatewayConfig, DEFAULT_MODEL};
use crate::prompts::TextStyle;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("missing required key `{0}` (set it in the config file or pass --{1})")]
    Missing(&'static str, &'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    pub seed: Option<u64>,
    pub rrs_probability: f64,
    pub tweets_per_target: usize,
    pub targets_per_rule: usize,
    pub text_style: TextStyle,
    pub filter_disagreements: bool,
    pub min_tokens: usize,
    pub dev_frac: f64,
    pub max_retries: u32,
    pub base_backoff_ms: u64,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let aug = AugmentConfig::with_seed(0);
        let gw = GatewayConfig::default();
        RunConfig {
            model: DEFAULT_MODEL.to_string(),
            seed: None,
            rrs_probability: aug.rrs_probability,
            tweets_per_target: aug.tweets_per_target,
            targets_per_rule: aug.targets_per_rule,
            text_style: aug.text_style,
            filter_disagreements: aug.filter_disagreements,
            min_tokens: DEFAULT_MIN_TOKENS,
            dev_frac: 0.15,
            max_retries: gw.max_retries,
            base_backoff_ms: gw.base_backoff.as_millis() as u64,
            concurrency: gw.concurrency,
            cache_dir: None,
        }
    }
}

impl RunConfig {
    pub fn parse(src: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(src).map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&src, path)
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn require_seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or(ConfigError::Missing("seed", "seed"))
    }

    /// SHA-256 over the effective configuration in its canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn gateway(&self) -> GatewayConfig {
        GatewayConfig {
            model: self.model.clone(),
            max_retries: self.max_retries,
            base_backoff: Duration::from_millis(self.base_backoff_ms),
            concurrency: self.concurrency.max(1),
            cache_dir: self.cache_dir.clone(),
        }
    }

    pub fn augment(&self, seed: u64) -> AugmentConfig {
        AugmentConfig {
            rrs_probability: self.rrs_probability,
            tweets_per_target: self.tweets_per_target,
            targets_per_rule: self.targets_per_rule,
            seed,
            filter_disagreements: self.filter_disagreements,
            text_style: self.text_style,
        }
    }
}
