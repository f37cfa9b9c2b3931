//! Run configuration: training knobs, learning-rate schedule, and the
//! TOML round trip used for config snapshots and checkpoint sidecars.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::hex;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::wavelet::WaveletKind;

/// One stage of the piecewise-constant learning-rate schedule: `lr` holds
/// from `from_step` until the next stage begins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrStage {
    pub from_step: u64,
    pub lr: f64,
}

/// Every knob of a training run. Defaults reproduce the reference recipe
/// at desk scale: 5000 steps with the learning rate dropping 2e-4 ->
/// 2e-5 -> 2e-6 at the 1/3 and 2/3 points, batch 16, crop 256,
/// lambda 0.25, mu 5000, gamma 2.2, Haar wavelet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub crop: usize,
    /// Empty means: derive the default three-stage schedule from `steps`.
    pub lr_schedule: Vec<LrStage>,
    pub width: usize,
    pub color_channels: usize,
    pub wavelet: WaveletKind,
    pub no_attention: bool,
    pub avg_hf_fusion: bool,
    pub forward_all_bands: bool,
    pub no_sobel: bool,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub augment_seed: u64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            batch: 16,
            crop: 256,
            lr_schedule: Vec::new(),
            width: 64,
            color_channels: 3,
            wavelet: WaveletKind::Haar,
            no_attention: false,
            avg_hf_fusion: false,
            forward_all_bands: false,
            no_sobel: false,
            lambda: 0.25,
            mu: 5000.0,
            gamma: 2.2,
            init_seed: 0,
            shuffle_seed: 1,
            augment_seed: 2,
            checkpoint_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            width: self.width,
            color_channels: self.color_channels,
            wavelet: self.wavelet,
            no_attention: self.no_attention,
            avg_hf_fusion: self.avg_hf_fusion,
            forward_all_bands: self.forward_all_bands,
            no_sobel: self.no_sobel,
            lambda: self.lambda,
            mu: self.mu,
            gamma: self.gamma,
        }
    }

    /// The schedule actually used: the configured one, or the default
    /// three-stage drop derived from `steps`.
    pub fn resolved_schedule(&self) -> Vec<LrStage> {
        if !self.lr_schedule.is_empty() {
            return self.lr_schedule.clone();
        }
        vec![
            LrStage {
                from_step: 0,
                lr: 2e-4,
            },
            LrStage {
                from_step: self.steps / 3,
                lr: 2e-5,
            },
            LrStage {
                from_step: self.steps * 2 / 3,
                lr: 2e-6,
            },
        ]
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let schedule = self.resolved_schedule();
        let mut lr = schedule[0].lr;
        for stage in &schedule {
            if step >= stage.from_step {
                lr = stage.lr;
            }
        }
        lr
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        if self.crop == 0 || self.crop % 8 != 0 {
            return Err(Error::Config(format!(
                "crop must be a positive multiple of 8, got {}",
                self.crop
            )));
        }
        let schedule = self.resolved_schedule();
        for pair in schedule.windows(2) {
            if pair[1].from_step <= pair[0].from_step {
                return Err(Error::Config(
                    "lr schedule thresholds must be strictly increasing".into(),
                ));
            }
        }
        if schedule.iter().any(|s| s.lr <= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        self.model_config().validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::data::write_atomic(path, self.to_toml().as_bytes())
    }
}

pub fn save_model_config(cfg: &ModelConfig, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg).expect("model config serializes");
    crate::data::write_atomic(path, text.as_bytes())
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ModelConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Digest of the architecture-relevant configuration.
pub fn model_config_digest(cfg: &ModelConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(cfg).expect("model config serializes"));
    hex(&hasher.finalize())
}
