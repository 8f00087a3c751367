use grounding_core::textenc::EncoderSpec;
use grounding_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use super::lift::ImageSpec;

/// Architecture and objective of the one-stage model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BevConfig {
    pub grid: GridSpec,
    pub image: ImageSpec,
    pub text: EncoderSpec,
    /// Channels of the shared per-voxel layer.
    pub voxel_channels: usize,
    /// Width of every BEV map and of the decoder.
    pub width: usize,
    pub heads: usize,
    /// Proposals kept from the heatmap.
    pub proposals: usize,
    pub loss: LossWeights,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            image: ImageSpec::default(),
            text: EncoderSpec::Hash { dim: 64, seed: 0 },
            voxel_channels: 4,
            width: 64,
            heads: 4,
            proposals: 200,
            loss: LossWeights::default(),
        }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.width == 0 || self.width % 4 != 0 {
            return Err(Error::InvalidArgument(format!("width {} must be a positive multiple of 4", self.width)));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.proposals == 0 || self.proposals > self.grid.cells() {
            return Err(Error::InvalidArgument(format!(
                "{} proposals do not fit a {}-cell grid",
                self.proposals,
                self.grid.cells()
            )));
        }
        if self.voxel_channels == 0 || self.image.channels == 0 || self.image.downsample == 0 {
            return Err(Error::InvalidArgument("zero-width voxel or image layer".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub heatmap: f64,
    pub cls: f64,
    pub reg: f64,
    /// Matching cost weight on `1 - p`.
    pub match_cls: f64,
    /// Matching cost weight on the L1 distance of box codes.
    pub match_box: f64,
    pub focal_alpha: f64,
    pub focal_beta: f64,
    pub cls_gamma: f64,
    pub cls_alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            heatmap: 1.0,
            cls: 1.0,
            reg: 1.0,
            match_cls: 1.0,
            match_box: 0.25,
            focal_alpha: 2.0,
            focal_beta: 4.0,
            cls_gamma: 2.0,
            cls_alpha: 0.25,
        }
    }
}

/// Two-stage optimisation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Lidar-only stage.
    pub epochs: usize,
    pub lr: f64,
    /// Camera fine-tuning stage; 0 epochs skips it.
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    /// Optional cap on optimizer steps per stage.
    pub max_steps: Option<usize>,
    pub schedule: LrSchedule,
    pub clip_norm: f64,
    /// Inject the ground-truth cell into the proposal set during training.
    pub force_gt_proposal: bool,
    /// Write a checkpoint every this many steps (0: only at stage ends).
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 4,
            epochs: 20,
            lr: 1e-3,
            finetune_epochs: 6,
            finetune_lr: 1e-4,
            max_steps: None,
            schedule: LrSchedule::Constant,
            clip_norm: 10.0,
            force_gt_proposal: true,
            checkpoint_every: 0,
            log_every: 50,
        }
    }
}

/// Learning-rate shape within a stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to 5% of it.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }
}
