//! One-stage BEV grounding: point and camera encoders, text-conditioned
//! pyramid, heatmap proposals, attention decoder and detection head.

pub mod checkpoint;
mod config;
pub mod grid;
pub mod lift;
mod model;
mod train;

pub use checkpoint::{Checkpoint, Stage, TrainState};
pub use config::{BevConfig, LossWeights, LrSchedule, TrainConfig};
pub use grid::{BevGrid, GridSpec};
pub use lift::ImageSpec;
pub use model::{best_box, BevGrounding, Forward, LossTerms, ProposalPolicy, SceneInput, PRIOR_BIAS};
pub use train::{load_from_dir, predict, Dataset, Example, SceneData, StepLog, Trainer};
