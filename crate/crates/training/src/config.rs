//! Per-stage training settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use spectraforge_core::augment::AffineRanges;
use spectraforge_core::spectral::{default_leds, LedBandSpec};
use spectraforge_core::spotmask::DEFAULT_SPOT_RATIO;
use spectraforge_tensornet::{AdamConfig, LossConfig, LossWeights, NetworkConfig};

use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Inputs are projected from the ground truth.
    Pretrain,
    /// Projected and raw-camera inputs mixed in every batch.
    Main,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Main => "main",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "main" => Ok(Stage::Main),
            other => Err(TrainError::Config(format!("unknown stage {other:?} (expected pretrain or main)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub ranges: AffineRanges,
    /// Warp the ground truth together with the input.
    pub warp_gt: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            ranges: AffineRanges::default(),
            warp_gt: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub projected_per_batch: usize,
    pub raw_per_batch: usize,
    pub augment: AugmentConfig,
    pub optimizer: AdamConfig,
    /// Seeds network initialization, shuffling and augmentation.
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Training ids held back for the per-epoch validation angle.
    pub validation_count: usize,
    /// Mask and inpaint LED spots in raw-camera items before augmentation.
    pub inpaint_raw: bool,
    pub spot_ratio: f64,
    pub network: NetworkConfig,
    pub leds: Vec<LedBandSpec>,
}

impl TrainConfig {
    /// Defaults for `stage` on the full-size network.
    pub fn for_stage(stage: Stage) -> Self {
        let (weights, lr, projected, raw) = match stage {
            Stage::Pretrain => (LossWeights::PRETRAIN, 1e-3, 5, 0),
            Stage::Main => (LossWeights::MAIN, 1e-4, 3, 2),
        };
        TrainConfig {
            stage,
            epochs: 1000,
            batch_size: 5,
            loss: LossConfig::new(weights),
            projected_per_batch: projected,
            raw_per_batch: raw,
            augment: AugmentConfig::default(),
            optimizer: AdamConfig::with_lr(lr),
            seed: 0,
            checkpoint_every: 50,
            validation_count: 0,
            inpaint_raw: false,
            spot_ratio: DEFAULT_SPOT_RATIO,
            network: NetworkConfig::full(),
            leds: default_leds(),
        }
    }

    /// Stage defaults on the 64×64×8 → 16×16×32 network.
    pub fn tiny(stage: Stage) -> Self {
        TrainConfig {
            network: NetworkConfig::tiny(),
            checkpoint_every: 0,
            ..Self::for_stage(stage)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.projected_per_batch + self.raw_per_batch != self.batch_size {
            return bad(format!(
                "projected_per_batch {} + raw_per_batch {} must equal batch_size {}",
                self.projected_per_batch, self.raw_per_batch, self.batch_size
            ));
        }
        if self.stage == Stage::Pretrain && self.raw_per_batch != 0 {
            return bad("the pretrain stage uses projected items only".into());
        }
        if !(self.spot_ratio.is_finite() && self.spot_ratio > 0.0) {
            return bad(format!("spot_ratio must be positive, got {}", self.spot_ratio));
        }
        if !(self.loss.beta.is_finite() && self.loss.beta > 0.0) {
            return bad(format!("smooth-L1 beta must be positive, got {}", self.loss.beta));
        }
        if self.leds.len() != self.network.input[2] {
            return bad(format!(
                "{} LEDs but the network takes {} input channels",
                self.leds.len(),
                self.network.input[2]
            ));
        }
        self.loss.weights.validate()?;
        self.optimizer.validate()?;
        self.network.validate()?;
        if self.augment.enabled {
            self.augment.ranges.validate()?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|source| TrainError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}
