//! The run configuration: one TOML document covering model, loss, decoder,
//! augmentation, data generation and trainer settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::decoder::DecoderConfig;
use crate::loss::LossConfig;
use crate::model::RDCNetConfig;
use crate::tensor::TensorError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    pub patch_size: usize,
    /// Stop early once the validation F1 reaches this value (0 disables).
    pub early_stop_f1: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 30,
            batch_size: 2,
            lr_max: 1e-3,
            lr_min: 1e-5,
            seed: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
            patch_size: 64,
            early_stop_f1: 0.0,
        }
    }
}

/// Parameters of the synthetic dataset generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub min_instances: usize,
    pub max_instances: usize,
    pub radius_range: [f64; 2],
    pub overlap_fraction: f64,
    pub noise_level: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            min_instances: 3,
            max_instances: 8,
            radius_range: [4.0, 8.0],
            overlap_fraction: 0.15,
            noise_level: 0.03,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: RDCNetConfig,
    pub loss: LossConfig,
    pub decoder: DecoderConfig,
    pub augment: AugmentConfig,
    pub data: DataConfig,
    pub trainer: TrainerConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        self.model.validate()?;
        self.loss.validate()?;
        self.decoder.validate()?;
        self.augment.validate()?;
        if self.trainer.batch_size == 0 {
            return Err(TensorError::Config("trainer.batch_size must be >= 1".into()));
        }
        if self.trainer.patch_size % self.model.scale != 0 {
            return Err(TensorError::Config(format!(
                "trainer.patch_size {} is not divisible by model.scale {}",
                self.trainer.patch_size, self.model.scale
            )));
        }
        if self.trainer.lr_max < self.trainer.lr_min {
            return Err(TensorError::Config(format!(
                "trainer.lr_max {} < trainer.lr_min {}",
                self.trainer.lr_max, self.trainer.lr_min
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, TensorError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| TensorError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, TensorError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            TensorError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }
}
