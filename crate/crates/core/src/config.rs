//! Run configuration: a flat TOML document with an explicit schema version.
//! All pipeline randomness flows from the single seed here, and stage
//! outputs are content-addressed by the configuration hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classical::forest::RfConfig;
use crate::classical::gbt::GbtConfig;
use crate::meta::MetaConfig;
use crate::neural::train::TrainConfig;
use crate::preprocess::PreprocessConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mains region; sets the notch frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "EU-50Hz")]
    Eu50,
    #[serde(rename = "US-60Hz")]
    Us60,
}

impl Region {
    pub fn notch_freq(&self) -> f64 {
        match self {
            Region::Eu50 => 50.0,
            Region::Us60 => 60.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub region: Region,
    pub seed: u64,
    /// Worker threads for recording- and fold-level parallelism; 0 = all
    /// available cores.
    pub parallelism: usize,
    pub frame_seconds: f64,
    pub reject_threshold_uv: f64,
    pub reject_after_reference: bool,
    pub zero_phase: bool,
    pub train: TrainConfig,
    pub gbt: GbtConfig,
    pub gbe_members: usize,
    pub rf: RfConfig,
    pub meta: MetaConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            region: Region::Eu50,
            seed: 7,
            parallelism: 0,
            frame_seconds: 6.0,
            reject_threshold_uv: 800.0,
            reject_after_reference: true,
            zero_phase: false,
            train: TrainConfig::default(),
            gbt: GbtConfig::default(),
            gbe_members: crate::classical::gbt::GBE_MEMBERS,
            rf: RfConfig::default(),
            meta: MetaConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "schema version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.frame_seconds <= 0.0 {
            return Err(ConfigError::Invalid("frame_seconds must be positive".into()));
        }
        if self.reject_threshold_uv <= 0.0 {
            return Err(ConfigError::Invalid(
                "reject_threshold_uv must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.gbt.colsample_bylevel)
            && self.gbt.colsample_bylevel != 1.0
        {
            return Err(ConfigError::Invalid(
                "gbt.colsample_bylevel must lie in (0, 1]".into(),
            ));
        }
        if self.meta.inverse_regularization <= 0.0 {
            return Err(ConfigError::Invalid("meta C must be positive".into()));
        }
        Ok(())
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            notch_freq: self.region.notch_freq(),
            frame_seconds: self.frame_seconds,
            reject_threshold_uv: self.reject_threshold_uv,
            reject_after_reference: self.reject_after_reference,
            zero_phase: self.zero_phase,
            ..PreprocessConfig::default()
        }
    }

    /// Hex digest identifying this configuration; stage outputs carry it so
    /// artifacts from different configurations never mix silently.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Resolves a directory argument: explicit flag wins, then the environment
/// variable, then the default.
pub fn resolve_dir(flag: Option<PathBuf>, env_var: &str, default: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(env_var).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default))
}

/// Stage marker written next to stage outputs for idempotent re-runs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct StageStamp {
    pub stage: String,
    pub config_hash: String,
    pub input_hash: String,
}

impl StageStamp {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(
            dir.join(format!("stage_{}.json", self.stage)),
            serde_json::to_string_pretty(self).expect("stamp serializes"),
        )
    }

    pub fn matches(&self, dir: &Path) -> bool {
        let path = dir.join(format!("stage_{}.json", self.stage));
        match std::fs::read_to_string(path) {
            Ok(text) => serde_json::from_str::<StageStamp>(&text)
                .map(|s| s == *self)
                .unwrap_or(false),
            Err(_) => false,
        }
    }
}
