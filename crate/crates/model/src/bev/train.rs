//! Datasets, the two-stage training loop and batch prediction.

use std::collections::HashMap;
use std::path::Path;

use grounding_core::camera::CameraRig;
use grounding_core::datakit::GroundingSample;
use grounding_core::evalkit::PredictionRecord;
use grounding_core::geometry::Box3D;
use grounding_core::textenc::{TextEmbeddings, TextEncoder};
use grounding_core::{Error, PointCloud, Result};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{self, Checkpoint, Stage, TrainState};
use super::config::TrainConfig;
use super::model::{BevGrounding, ProposalPolicy, SceneInput};
use crate::graph::Graph;
use crate::optim::{Adam, AdamConfig};
use crate::Real;

/// One prompt with its target, pointing at a prepared scene.
#[derive(Clone, Debug)]
pub struct Example<T> {
    pub sample_id: String,
    pub scene: usize,
    pub text: TextEmbeddings<T>,
    pub target: Box3D<f64>,
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub scenes: Vec<SceneInput<T>>,
    pub examples: Vec<Example<T>>,
}

/// Raw frame contents handed to [`Dataset::build`].
pub type SceneData = (PointCloud, Option<Vec<RgbImage>>);

impl<T: Real> Dataset<T> {
    /// Prepares every distinct scene once; `load` is called with the first
    /// sample of each scene.
    pub fn build(
        model: &BevGrounding<T>,
        samples: &[GroundingSample],
        encoder: &dyn TextEncoder,
        mut load: impl FnMut(&GroundingSample) -> Result<SceneData>,
    ) -> Result<Self> {
        if encoder.width() != model.text_dim {
            return Err(Error::InvalidArgument(format!(
                "encoder width {} does not match the model ({})",
                encoder.width(),
                model.text_dim
            )));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut scenes = Vec::new();
        let mut examples = Vec::with_capacity(samples.len());
        for s in samples {
            let scene = match index.get(s.scene_id.as_str()) {
                Some(&i) => i,
                None => {
                    let (frame, views) = load(s)?;
                    scenes.push(model.prepare_scene(&frame, views.as_deref()));
                    index.insert(&s.scene_id, scenes.len() - 1);
                    scenes.len() - 1
                }
            };
            examples.push(Example {
                sample_id: s.sample_id.clone(),
                scene,
                text: encoder.encode(&s.prompt)?.cast(),
                target: s.referred,
            });
        }
        Ok(Self { scenes, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn has_views(&self) -> bool {
        self.scenes.iter().all(|s| s.views.is_some())
    }

    /// Keeps only the listed examples (in the given order).
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            scenes: self.scenes.clone(),
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }
}

/// Reads a sample's point cloud and (optionally) its six rasters, with
/// paths relative to `root`.
pub fn load_from_dir(root: &Path, with_views: bool) -> impl FnMut(&GroundingSample) -> Result<SceneData> + '_ {
    move |s: &GroundingSample| {
        let frame = PointCloud::read(&root.join(&s.lidar_ref))?;
        let views = if with_views {
            let mut v = Vec::with_capacity(s.image_refs.len());
            for r in &s.image_refs {
                let p = root.join(r);
                let img = image::open(&p).map_err(|e| Error::Image(format!("{}: {e}", p.display())))?;
                v.push(img.to_rgb8());
            }
            Some(v)
        } else {
            None
        };
        Ok((frame, views))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub stage: Stage,
    pub step: usize,
    pub loss: f64,
    pub heatmap: f64,
    pub cls: f64,
    pub reg: f64,
    pub grad_norm: f64,
}

/// Optimizer state plus schedule position; resumable from a checkpoint.
pub struct Trainer {
    pub model: BevGrounding<f32>,
    pub config: TrainConfig,
    pub rig: Option<CameraRig>,
    pub state: TrainState,
    pub adam: Adam<f32>,
    pub log: Vec<StepLog>,
}

fn adam_config(lr: f64, cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr,
        clip_norm: cfg.clip_norm,
        ..AdamConfig::default()
    }
}

impl Trainer {
    pub fn new(mut model: BevGrounding<f32>, config: TrainConfig, rig: Option<CameraRig>) -> Result<Self> {
        if config.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        model.use_images = false;
        let adam = Adam::new(&model.params, adam_config(config.lr, &config));
        let state = TrainState {
            stage: Stage::Lidar,
            step: 0,
            adam: adam.config.clone(),
            adam_t: 0,
        };
        Ok(Self {
            model,
            config,
            rig,
            state,
            adam,
            log: Vec::new(),
        })
    }

    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        let (Some(state), Some(adam), Some(config)) = (ckpt.state, ckpt.optimizer, ckpt.train) else {
            return Err(Error::Format("checkpoint carries no training state".into()));
        };
        Ok(Self {
            model: ckpt.model,
            config,
            rig: ckpt.rig,
            state,
            adam,
            log: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut st = self.state.clone();
        st.adam_t = self.adam.t;
        checkpoint::save(path, &self.model, self.rig.as_ref(), Some(&self.config), Some((&st, &self.adam)))
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.config.batch_size)
    }

    /// Optimizer steps scheduled for `stage` on `n` examples.
    pub fn stage_steps(&self, stage: Stage, n: usize) -> usize {
        let epochs = match stage {
            Stage::Lidar => self.config.epochs,
            Stage::Camera => self.config.finetune_epochs,
        };
        let total = epochs * self.steps_per_epoch(n);
        self.config.max_steps.map_or(total, |m| total.min(m))
    }

    /// Example indices of the current step.
    fn batch(&self, n: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(n);
        let epoch = self.state.step / spe;
        let b = self.state.step % spe;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let stage_id = match self.state.stage {
            Stage::Lidar => 0u64,
            Stage::Camera => 1,
        };
        rng.set_stream(stage_id << 32 | epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let bs = self.config.batch_size;
        order[b * bs..((b + 1) * bs).min(n)].to_vec()
    }

    /// Moves to the camera stage when the lidar stage is exhausted and a
    /// fine-tuning stage is configured. Returns false when training is over.
    fn ensure_stage(&mut self, data: &Dataset<f32>) -> bool {
        let n = data.len();
        if self.state.step < self.stage_steps(self.state.stage, n) {
            return true;
        }
        let can_finetune = self.state.stage == Stage::Lidar
            && self.stage_steps(Stage::Camera, n) > 0
            && self.model.has_camera_branch()
            && data.has_views();
        if !can_finetune {
            return false;
        }
        self.model.use_images = true;
        self.adam = Adam::new(&self.model.params, adam_config(self.config.finetune_lr, &self.config));
        self.state = TrainState {
            stage: Stage::Camera,
            step: 0,
            adam: self.adam.config.clone(),
            adam_t: 0,
        };
        true
    }

    pub fn finished(&self, data: &Dataset<f32>) -> bool {
        let n = data.len();
        if self.state.step < self.stage_steps(self.state.stage, n) {
            return false;
        }
        !(self.state.stage == Stage::Lidar
            && self.stage_steps(Stage::Camera, n) > 0
            && self.model.has_camera_branch()
            && data.has_views())
    }

    /// Loss and summed parameter gradients of one example.
    pub fn example_grads(&self, data: &Dataset<f32>, i: usize, acc: &mut [Vec<f32>]) -> Result<[f64; 4]> {
        let ex = &data.examples[i];
        let scene = &data.scenes[ex.scene];
        let grid = self.model.grid();
        let policy = match grid.cell_of(ex.target.x, ex.target.y) {
            Some((c, r)) if self.config.force_gt_proposal => ProposalPolicy::PeaksWith(grid.flat(c, r)),
            _ => ProposalPolicy::Peaks,
        };
        let mut g = Graph::new();
        let fw = self.model.forward(&mut g, scene, &ex.text, &policy)?;
        let terms = self.model.loss(&mut g, &fw, &ex.target, None)?;
        let grads = g.backward(terms.total);
        grads.accumulate(acc);
        let v = |x| g.value(x).data()[0] as f64;
        Ok([v(terms.total), v(terms.heatmap), v(terms.cls), v(terms.reg)])
    }

    /// One optimizer step of the current stage, or `None` when training is over.
    pub fn step(&mut self, data: &Dataset<f32>) -> Result<Option<StepLog>> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if !self.ensure_stage(data) {
            return Ok(None);
        }
        let batch = self.batch(data.len());
        let mut acc = self.model.params.zero_grads();
        let mut sums = [0.0f64; 4];
        for &i in &batch {
            let l = self.example_grads(data, i, &mut acc)?;
            for k in 0..4 {
                sums[k] += l[k];
            }
        }
        let inv = 1.0 / batch.len() as f32;
        for v in acc.iter_mut().flat_map(|g| g.iter_mut()) {
            *v *= inv;
        }
        let nb = batch.len() as f64;
        if !sums.iter().all(|v| v.is_finite()) {
            return Err(Error::Integrity(format!(
                "non-finite loss at {:?} step {}",
                self.state.stage, self.state.step
            )));
        }
        let base = match self.state.stage {
            Stage::Lidar => self.config.lr,
            Stage::Camera => self.config.finetune_lr,
        };
        let total = self.stage_steps(self.state.stage, data.len());
        self.adam.config.lr = base * self.config.schedule.factor(self.state.step, total);
        let grad_norm = self.adam.step(&mut self.model.params, &mut acc);
        let log = StepLog {
            stage: self.state.stage,
            step: self.state.step,
            loss: sums[0] / nb,
            heatmap: sums[1] / nb,
            cls: sums[2] / nb,
            reg: sums[3] / nb,
            grad_norm,
        };
        self.state.step += 1;
        self.state.adam_t = self.adam.t;
        if self.config.log_every > 0 && log.step % self.config.log_every == 0 {
            log::info!(
                "{:?} step {}: loss {:.4} (heatmap {:.4}, cls {:.4}, reg {:.4})",
                log.stage,
                log.step,
                log.loss,
                log.heatmap,
                log.cls,
                log.reg
            );
        }
        self.log.push(log.clone());
        Ok(Some(log))
    }

    /// Trains to the end of the schedule, checkpointing to `ckpt` when given.
    pub fn run(&mut self, data: &Dataset<f32>, ckpt: Option<&Path>) -> Result<()> {
        while self.step(data)?.is_some() {
            if let Some(p) = ckpt {
                let every = self.config.checkpoint_every;
                if every > 0 && self.state.step % every == 0 {
                    self.save(p)?;
                }
            }
        }
        if let Some(p) = ckpt {
            self.save(p)?;
        }
        Ok(())
    }
}

/// Argmax-confidence box for every example.
pub fn predict<T: Real>(model: &BevGrounding<T>, data: &Dataset<T>) -> Result<Vec<PredictionRecord>> {
    data.examples
        .iter()
        .map(|ex| {
            let (bbox, confidence) = model.predict(&data.scenes[ex.scene], &ex.text)?;
            Ok(PredictionRecord {
                sample_id: ex.sample_id.clone(),
                bbox,
                confidence,
            })
        })
        .collect()
}
