//! Declarative pipeline configuration in TOML. Every section is optional
//! and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::crf::CrfConfig;
use crate::error::{Error, Result};
use crate::graphgan::GanConfig;
use crate::metrics::vol_thresholds;
use crate::parsernet::ModelConfig;
use crate::scene::SceneConfig;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "MHPARSE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Write a checkpoint every this many steps; 0 writes only the last.
    pub checkpoint_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 4,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    /// Kernel bandwidth of the predicted affinity at inference.
    pub theta: f64,
    pub refine: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            theta: crate::affinity::DEFAULT_THETA,
            refine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub thresholds: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            thresholds: vol_thresholds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub runs: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "data".into(),
            runs: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub gan: GanConfig,
    pub training: TrainingConfig,
    pub crf: CrfConfig,
    pub clustering: ClusteringConfig,
    pub metrics: MetricsConfig,
    pub paths: PathsConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.gan.validate()?;
        self.crf.validate()?;
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be positive".into()));
        }
        if !(self.clustering.theta > 0.0) {
            return Err(Error::Config("clustering.theta must be positive".into()));
        }
        if let Some(t) = self.metrics.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!("metrics threshold {t} outside (0, 1)")));
        }
        Ok(())
    }

    /// Applies `MHPARSE_SEED` if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(PipelineConfig::from_toml("[scene]\nheigth = 64\n").is_err());
        assert!(PipelineConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 9\n[crf]\niterations = 3\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.crf.iterations, 3);
        assert_eq!(cfg.scene, SceneConfig::default());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(PipelineConfig::from_toml("[training]\nbatch_size = 0\n").is_err());
        assert!(PipelineConfig::from_toml("[metrics]\nthresholds = [0.5, 1.0]\n").is_err());
    }
}
