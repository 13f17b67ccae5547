//! Platform configuration, read from TOML or JSON.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use nourid_core::analytics::{Hyperparams, SubsidyThresholds};
use nourid_core::deid::IssuanceKey;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::registry::PopulationConfig;
use crate::sim::LoadModel;

pub const CONFIG_ENV: &str = "NOURID_CONFIG";
pub const KEY_ENV: &str = "NOURID_ISSUANCE_KEY";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("issuance key must be 64 hex characters")]
    BadKey,
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    /// Fixed decision threshold. When absent the one calibrated at seed
    /// time is used.
    pub threshold: Option<f64>,
    /// Per-coordinate sigma of simulated genuine captures.
    pub noise_sigma: f64,
    /// Genuine and impostor pairs used for calibration.
    pub calibration_pairs: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig { threshold: None, noise_sigma: 0.20, calibration_pairs: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorConfig {
    /// Probability that an injected defect is observable by the rules.
    pub detectability: f64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        ValidatorConfig { detectability: 0.98 }
    }
}

/// Argon2id cost parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PasswordHashing {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl Default for PasswordHashing {
    fn default() -> Self {
        PasswordHashing { memory_kib: 19 * 1024, iterations: 2, parallelism: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsConfig {
    /// Days of synthetic history behind each DE-ID, ending the day before
    /// the registry reference date.
    pub history_days: u32,
    pub default_horizon: usize,
    pub max_horizon: usize,
    pub load: LoadModel,
    pub model: Hyperparams,
    pub subsidy: SubsidyThresholds,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        AnalyticsConfig {
            history_days: 730,
            default_horizon: 14,
            max_horizon: 30,
            load: LoadModel::default(),
            model: Hyperparams::default(),
            subsidy: SubsidyThresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub seed: u64,
    pub session_ttl_secs: u64,
    /// 64 hex characters. `NOURID_ISSUANCE_KEY` takes precedence.
    pub issuance_key: Option<String>,
    /// Audit events between snapshots.
    pub snapshot_every: u64,
    pub matcher: MatcherConfig,
    pub validator: ValidatorConfig,
    pub password_hashing: PasswordHashing,
    pub population: PopulationConfig,
    pub analytics: AnalyticsConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("nourid-data"),
            seed: 42,
            session_ttl_secs: 3600,
            issuance_key: None,
            snapshot_every: 500,
            matcher: MatcherConfig::default(),
            validator: ValidatorConfig::default(),
            password_hashing: PasswordHashing::default(),
            population: PopulationConfig::default(),
            analytics: AnalyticsConfig::default(),
        }
    }
}

impl Config {
    /// Loads `path`, else the file named by `NOURID_CONFIG`, else defaults.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let from_env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let cfg = match path.map(Path::to_path_buf).or(from_env) {
            Some(p) => Self::from_file(&p)?,
            None => Config::default(),
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| ConfigError::Parse { path: path.into(), message })
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.matcher.noise_sigma.is_nan() || self.matcher.noise_sigma < 0.0 {
            return Err(ConfigError::Invalid("matcher.noise_sigma must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.validator.detectability) {
            return Err(ConfigError::Invalid("validator.detectability must be in [0, 1]".into()));
        }
        let s = &self.analytics.subsidy;
        if s.tier_a_below.is_nan() || s.tier_b_below.is_nan() || s.tier_a_below > s.tier_b_below {
            return Err(ConfigError::Invalid("subsidy tier_a_below exceeds tier_b_below".into()));
        }
        self.population.check().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// The key from the environment or the config. Without either, a
    /// development key is derived from the seed.
    pub fn issuance_key(&self) -> Result<IssuanceKey, ConfigError> {
        let hex = std::env::var(KEY_ENV).ok().or_else(|| self.issuance_key.clone());
        match hex {
            Some(h) => IssuanceKey::from_hex(h.trim()).ok_or(ConfigError::BadKey),
            None => {
                tracing::warn!("no issuance key configured; deriving a development key from the seed");
                let digest = Sha256::new().chain_update(b"nourid development key").chain_update(self.seed.to_be_bytes()).finalize();
                Ok(IssuanceKey::new(digest.into()))
            }
        }
    }
}
