//! The one-stage grounding network.

use std::sync::Arc;

use grounding_core::camera::CameraRig;
use grounding_core::geometry::Box3D;
use grounding_core::textenc::TextEmbeddings;
use grounding_core::{Error, Result};

use crate::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{BevConfig, LossWeights};
use super::grid::{self, GridSpec, BOX_CODE, VOXEL_FEATURES};
use super::lift::{self, ImageSpec};
use crate::graph::{sigmoid, Graph, SparseCols, Var};
use crate::hungarian::hungarian_match;
use crate::losses;
use crate::nn::{Block, Conv, Init, Linear};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Initial bias of the heatmap and confidence logits (prior 0.1).
pub const PRIOR_BIAS: f64 = -2.19;

/// Everything the network sees of one frame, prepared once per scene.
#[derive(Clone, Debug)]
pub struct SceneInput<T> {
    /// `[VOXEL_FEATURES, nz * H * W]`
    pub voxels: Tensor<T>,
    /// Six `[3, h, w]` views, or `None` when no cameras are available.
    pub views: Option<Vec<Tensor<T>>>,
}

impl<T: Real> SceneInput<T> {
    pub fn cast<U: Real>(&self) -> SceneInput<U> {
        SceneInput {
            voxels: self.voxels.cast(),
            views: self.views.as_ref().map(|v| v.iter().map(Tensor::cast).collect()),
        }
    }
}

/// How proposal cells are chosen for a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum ProposalPolicy {
    /// Heatmap peaks.
    Peaks,
    /// Heatmap peaks with the given cell forced in (replacing the weakest).
    PeaksWith(usize),
    /// Exactly these cells.
    Fixed(Vec<usize>),
}

/// Handles into one recorded forward pass.
pub struct Forward {
    pub f_points: Var,
    pub f_images: Option<Var>,
    pub fused: Var,
    pub bev: Var,
    pub heat: Var,
    pub positions: Vec<usize>,
    pub proposals: Var,
    pub refined: Var,
    /// `[K, 8]` box codes.
    pub reg: Var,
    /// `[K, 1]` confidence logits.
    pub logits: Var,
    /// Attention probabilities, per block then per head.
    pub attention: Vec<Vec<Var>>,
}

pub struct LossTerms {
    pub total: Var,
    pub heatmap: Var,
    pub cls: Var,
    pub reg: Var,
    /// Index into the proposal list of the matched proposal.
    pub matched: usize,
}

#[derive(Clone, Debug)]
struct Layers {
    voxel: ParamId,
    p1: Conv,
    p2: Conv,
    i1: Conv,
    i2: Conv,
    i_proj: Conv,
    reduce: Conv,
    fpn0: Conv,
    fpn1: Conv,
    fpn2: Conv,
    fpn_out: Conv,
    heat1: Conv,
    heat2: Conv,
    sa1: Block,
    spca: Block,
    sa2: Block,
    seca: Block,
    head1: Linear,
    head2: Linear,
}

pub struct BevGrounding<T: Real> {
    pub config: BevConfig,
    pub text_dim: usize,
    pub params: ParamStore<T>,
    /// When false the camera branch is skipped entirely.
    pub use_images: bool,
    layers: Layers,
    coords: Tensor<T>,
    pe_all: Tensor<T>,
    lift: Option<Arc<SparseCols<T>>>,
}

impl<T: Real> BevGrounding<T> {
    /// Randomly initialised model. `rig` enables the camera branch's lift.
    pub fn new(config: BevConfig, text_dim: usize, rig: Option<&CameraRig>, seed: u64) -> Result<Self> {
        config.validate()?;
        if text_dim == 0 {
            return Err(Error::InvalidArgument("text width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = config.width;
        let cv = config.voxel_channels;
        let ci = config.image.channels;
        let nz = config.grid.nz;
        let r = &mut rng;
        let voxel = s.add(
            "points.voxel.w",
            Tensor::randn(&[cv, VOXEL_FEATURES], (2.0 / VOXEL_FEATURES as f64).sqrt(), r),
        );
        let layers = Layers {
            voxel,
            p1: Conv::new(&mut s, "points.conv1", cv * nz, c, 3, 1, false, Init::He, r),
            p2: Conv::new(&mut s, "points.conv2", c, c, 3, 1, false, Init::He, r),
            i1: Conv::new(&mut s, "images.conv1", 3, ci, 3, 2, false, Init::He, r),
            i2: Conv::new(&mut s, "images.conv2", ci, ci, 3, 1, false, Init::He, r),
            i_proj: Conv::new(&mut s, "images.proj", ci, c, 1, 1, false, Init::Zero, r),
            reduce: Conv::new(&mut s, "fuse.reduce", c + 5 + text_dim, c, 1, 1, true, Init::He, r),
            fpn0: Conv::new(&mut s, "fpn.level0", c, c, 3, 1, true, Init::He, r),
            fpn1: Conv::new(&mut s, "fpn.level1", c, c, 3, 2, true, Init::He, r),
            fpn2: Conv::new(&mut s, "fpn.level2", c, c, 3, 2, true, Init::He, r),
            fpn_out: Conv::new(&mut s, "fpn.out", c, c, 3, 1, true, Init::He, r),
            heat1: Conv::new(&mut s, "heatmap.conv", c, c, 3, 1, true, Init::He, r),
            heat2: Conv::new(&mut s, "heatmap.out", c, 1, 1, 1, true, Init::Lecun, r),
            sa1: Block::new(&mut s, "decoder.sa1", c, c, config.heads, r),
            spca: Block::new(&mut s, "decoder.spca", c, c, config.heads, r),
            sa2: Block::new(&mut s, "decoder.sa2", c, c, config.heads, r),
            seca: Block::new(&mut s, "decoder.seca", c, text_dim, config.heads, r),
            head1: Linear::new(&mut s, "head.hidden", c, c, true, Init::He, r),
            head2: Linear::new(&mut s, "head.out", c, BOX_CODE + 1, true, Init::Lecun, r),
        };
        let bias = layers.heat2.b.unwrap();
        s.get_mut(bias).data_mut()[0] = T::lit(PRIOR_BIAS);
        let out_b = layers.head2.b.unwrap();
        s.get_mut(out_b).data_mut()[BOX_CODE] = T::lit(PRIOR_BIAS);
        // Start the size and rotation codes near a typical car.
        for (i, v) in [(3usize, 1.5f64), (4, 0.7), (5, 0.5), (7, 1.0), (2, -1.0)] {
            s.get_mut(out_b).data_mut()[i] = T::lit(v);
        }
        let g = &config.grid;
        let all: Vec<usize> = (0..g.cells()).collect();
        let pe_all = grid::positional_rows(&all, c, g);
        let coords = grid::coordinate_channels(g);
        let lift = match rig {
            Some(rig) => Some(Arc::new(lift::build_lift(rig, g, &config.image)?)),
            None => None,
        };
        Ok(Self {
            config,
            text_dim,
            params: s,
            use_images: false,
            layers,
            coords,
            pe_all,
            lift,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.config.grid
    }

    pub fn has_camera_branch(&self) -> bool {
        self.lift.is_some()
    }

    /// Shared per-voxel layer, vertical flattening and two 3x3 convolutions.
    /// Bias-free, so an empty frame maps to an all-zero grid.
    pub fn encode_points(&self, g: &mut Graph<T>, voxels: &Tensor<T>) -> Var {
        let n = self.config.grid.size();
        let nz = self.config.grid.nz;
        let cv = self.config.voxel_channels;
        assert_eq!(voxels.shape(), [VOXEL_FEATURES, nz * n * n], "voxel tensor does not match the grid");
        let x = g.input(voxels.clone());
        let w = g.param(&self.params, self.layers.voxel);
        let v = g.matmul(w, x);
        let v = g.relu(v);
        let v = g.reshape(v, &[cv * nz, n, n]);
        let h = self.layers.p1.forward(g, &self.params, v);
        let h = g.relu(h);
        let h = self.layers.p2.forward(g, &self.params, h);
        g.relu(h)
    }

    /// Per-view bias-free convolutions lifted to the grid and projected to
    /// the BEV width.
    pub fn encode_images(&self, g: &mut Graph<T>, views: &[Tensor<T>]) -> Result<Var> {
        let lift = self
            .lift
            .clone()
            .ok_or_else(|| Error::InvalidArgument("camera branch needs calibration".into()))?;
        let ci = self.config.image.channels;
        let mut feats = Vec::with_capacity(views.len());
        for view in views {
            let x = g.input(view.clone());
            let h = self.layers.i1.forward(g, &self.params, x);
            let h = g.relu(h);
            let h = self.layers.i2.forward(g, &self.params, h);
            let h = g.relu(h);
            let s = g.shape(h).to_vec();
            feats.push(g.reshape(h, &[ci, s[1] * s[2]]));
        }
        let cat = g.concat_cols(&feats);
        if g.shape(cat)[1] != lift.n_in {
            return Err(Error::InvalidArgument(format!(
                "{} image feature pixels do not match the lift ({})",
                g.shape(cat)[1],
                lift.n_in
            )));
        }
        let n = self.config.grid.size();
        let bev = g.spmm(cat, lift);
        let bev = g.reshape(bev, &[ci, n, n]);
        Ok(self.layers.i_proj.forward(g, &self.params, bev))
    }

    /// Text-conditioned BEV encoding: `[fused, coords, tiled f_sen]`,
    /// a 1x1 reduction and a three-level pyramid fused back to full size.
    pub fn trimodal(&self, g: &mut Graph<T>, fused: Var, sentence: &[T]) -> Var {
        let n = self.config.grid.size();
        assert_eq!(sentence.len(), self.text_dim, "sentence width");
        let sen = g.input(Tensor::from_vec(&[self.text_dim], sentence.to_vec()));
        let tiled = g.tile_cols(sen, n * n);
        let tiled = g.reshape(tiled, &[self.text_dim, n, n]);
        let coords = g.input(self.coords.clone());
        let cat = g.concat_rows(&[fused, coords, tiled]);
        let x = self.layers.reduce.forward(g, &self.params, cat);
        let x = g.relu(x);
        let c0 = self.layers.fpn0.forward(g, &self.params, x);
        let c0 = g.relu(c0);
        let c1 = self.layers.fpn1.forward(g, &self.params, c0);
        let c1 = g.relu(c1);
        let c2 = self.layers.fpn2.forward(g, &self.params, c1);
        let c2 = g.relu(c2);
        let s1 = g.shape(c1).to_vec();
        let up2 = g.upsample2(c2, s1[1], s1[2]);
        let p1 = g.add(c1, up2);
        let up1 = g.upsample2(p1, n, n);
        let p0 = g.add(c0, up1);
        let out = self.layers.fpn_out.forward(g, &self.params, p0);
        g.relu(out)
    }

    /// `[1, H, W]` heatmap logits.
    pub fn heatmap(&self, g: &mut Graph<T>, bev: Var) -> Var {
        let h = self.layers.heat1.forward(g, &self.params, bev);
        let h = g.relu(h);
        self.layers.heat2.forward(g, &self.params, h)
    }

    /// `[H*W, C]` rows of a `[C, H, W]` map.
    pub fn flatten_cells(&self, g: &mut Graph<T>, bev: Var) -> Var {
        let n = self.config.grid.size();
        let c = g.shape(bev)[0];
        let flat = g.reshape(bev, &[c, n * n]);
        g.transpose(flat)
    }

    /// SA, spatial cross-attention, SA, semantic cross-attention.
    /// `bev_rows` is `[H*W, C]` (positions already added), `word` `[T, d_t]`.
    pub fn decode_ground(&self, g: &mut Graph<T>, proposals: Var, bev_rows: Var, word: Var) -> (Var, Vec<Vec<Var>>) {
        let p = &self.params;
        let (q, a1) = self.layers.sa1.forward(g, p, proposals, None);
        let (q, a2) = self.layers.spca.forward(g, p, q, Some(bev_rows));
        let (q, a3) = self.layers.sa2.forward(g, p, q, None);
        let (q, a4) = self.layers.seca.forward(g, p, q, Some(word));
        (q, vec![a1, a2, a3, a4])
    }

    /// Box codes `[K, 8]` and confidence logits `[K, 1]`.
    pub fn head(&self, g: &mut Graph<T>, refined: Var) -> (Var, Var) {
        let h = self.layers.head1.forward(g, &self.params, refined);
        let h = g.relu(h);
        let out = self.layers.head2.forward(g, &self.params, h);
        (g.slice_cols(out, 0, BOX_CODE), g.slice_cols(out, BOX_CODE, BOX_CODE + 1))
    }

    pub fn forward(
        &self,
        g: &mut Graph<T>,
        scene: &SceneInput<T>,
        text: &TextEmbeddings<T>,
        policy: &ProposalPolicy,
    ) -> Result<Forward> {
        if text.dim != self.text_dim || text.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "text embedding width {} (with {} tokens) does not match the model ({})",
                text.dim,
                text.len(),
                self.text_dim
            )));
        }
        let f_points = self.encode_points(g, &scene.voxels);
        let f_images = if self.use_images {
            let views = scene
                .views
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("camera mode needs the six views".into()))?;
            Some(self.encode_images(g, views)?)
        } else {
            None
        };
        let fused = match f_images {
            Some(fi) => g.add(f_points, fi),
            None => f_points,
        };
        let bev = self.trimodal(g, fused, &text.sentence);
        let heat = self.heatmap(g, bev);
        let k = self.config.proposals;
        let n = self.config.grid.size();
        let positions = match policy {
            ProposalPolicy::Fixed(p) => {
                if p.is_empty() || p.iter().any(|&i| i >= n * n) {
                    return Err(Error::InvalidArgument("fixed proposals outside the grid".into()));
                }
                p.clone()
            }
            ProposalPolicy::Peaks | ProposalPolicy::PeaksWith(_) => {
                let probs: Vec<T> = g.value(heat).data().iter().map(|z| sigmoid(*z)).collect();
                let mut p = grid::select_peaks(&probs, n, k)?;
                if let ProposalPolicy::PeaksWith(cell) = policy {
                    if !p.contains(cell) {
                        *p.last_mut().unwrap() = *cell;
                    }
                }
                p
            }
        };
        let c = self.config.width;
        let rows = self.flatten_cells(g, bev);
        let gathered = g.gather_rows(rows, &positions);
        let pe = g.input(grid::positional_rows(&positions, c, &self.config.grid));
        let proposals = g.add(gathered, pe);
        let pe_all = g.input(self.pe_all.clone());
        let bev_rows = g.add(rows, pe_all);
        let word = g.input(Tensor::from_vec(&[text.len(), text.dim], text.word.clone()));
        let (refined, attention) = self.decode_ground(g, proposals, bev_rows, word);
        let (reg, logits) = self.head(g, refined);
        Ok(Forward {
            f_points,
            f_images,
            fused,
            bev,
            heat,
            positions,
            proposals,
            refined,
            reg,
            logits,
            attention,
        })
    }

    /// Heatmap, classification and regression terms against one target.
    /// `matched` overrides the Hungarian assignment.
    pub fn loss(&self, g: &mut Graph<T>, fw: &Forward, gt: &Box3D<f64>, matched: Option<usize>) -> Result<LossTerms> {
        let spec = &self.config.grid;
        let w: &LossWeights = &self.config.loss;
        let k = fw.positions.len();
        if k == 0 {
            return Err(Error::Empty("proposals"));
        }
        let targets: Vec<[f64; BOX_CODE]> = fw
            .positions
            .iter()
            .map(|&i| {
                let (c, r) = spec.unflat(i);
                grid::encode_box(gt, c, r, spec)
            })
            .collect();
        let matched = match matched {
            Some(m) => m,
            None => {
                let reg = g.value(fw.reg).data();
                let logit = g.value(fw.logits).data();
                let cost: Vec<Vec<f64>> = (0..k)
                    .map(|i| {
                        let p = sigmoid(logit[i]).to_f64_lossy();
                        let l1: f64 = (0..BOX_CODE)
                            .map(|j| (reg[i * BOX_CODE + j].to_f64_lossy() - targets[i][j]).abs())
                            .sum();
                        vec![w.match_cls * (1.0 - p) + w.match_box * l1]
                    })
                    .collect();
                hungarian_match(&cost)?[0]
            }
        };
        let heat_t: Vec<T> = grid::heatmap_target(gt, spec);
        let heatmap = losses::gaussian_focal(g, fw.heat, &heat_t, T::lit(w.focal_alpha), T::lit(w.focal_beta));
        let mut positive = vec![false; k];
        positive[matched] = true;
        let cls = losses::sigmoid_focal(g, fw.logits, &positive, T::lit(w.cls_gamma), T::lit(w.cls_alpha));
        let row = g.gather_rows(fw.reg, &[matched]);
        let t: Vec<T> = targets[matched].iter().map(|v| T::lit(*v)).collect();
        let reg = losses::l1_mean(g, row, &t);
        let total = g.weighted_sum(&[
            (heatmap, T::lit(w.heatmap)),
            (cls, T::lit(w.cls)),
            (reg, T::lit(w.reg)),
        ]);
        Ok(LossTerms {
            total,
            heatmap,
            cls,
            reg,
            matched,
        })
    }

    /// Boxes and confidences of every proposal of a forward pass.
    pub fn decode(&self, g: &Graph<T>, fw: &Forward) -> Vec<(Box3D<f64>, f64)> {
        let reg = g.value(fw.reg).data();
        let logits = g.value(fw.logits).data();
        fw.positions
            .iter()
            .enumerate()
            .map(|(i, &cell)| {
                let (c, r) = self.config.grid.unflat(cell);
                let code: Vec<f64> = reg[i * BOX_CODE..(i + 1) * BOX_CODE].iter().map(|v| v.to_f64_lossy()).collect();
                (
                    grid::decode_box(&code, c, r, &self.config.grid),
                    sigmoid(logits[i]).to_f64_lossy(),
                )
            })
            .collect()
    }

    /// The most confident decoded box (lowest proposal index on ties).
    pub fn predict(&self, scene: &SceneInput<T>, text: &TextEmbeddings<T>) -> Result<(Box3D<f64>, f64)> {
        let mut g = Graph::new();
        let fw = self.forward(&mut g, scene, text, &ProposalPolicy::Peaks)?;
        Ok(best_box(&self.decode(&g, &fw)))
    }

    /// Inputs for one scene; views are only prepared when the camera branch exists.
    pub fn prepare_scene(
        &self,
        frame: &grounding_core::PointCloud,
        views: Option<&[image::RgbImage]>,
    ) -> SceneInput<T> {
        SceneInput {
            voxels: grid::voxelize(frame, &self.config.grid),
            views: views.map(|v| {
                v.iter()
                    .map(|img| lift::prepare_view(img, self.config.image.downsample))
                    .collect()
            }),
        }
    }

    pub fn image_spec(&self) -> &ImageSpec {
        &self.config.image
    }

    /// Copy with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> BevGrounding<U> {
        BevGrounding {
            config: self.config.clone(),
            text_dim: self.text_dim,
            params: self.params.cast(),
            use_images: self.use_images,
            layers: self.layers.clone(),
            coords: self.coords.cast(),
            pe_all: self.pe_all.cast(),
            lift: self.lift.as_ref().map(|l| Arc::new(l.cast())),
        }
    }
}

/// Highest confidence wins; earlier entries win ties.
pub fn best_box(candidates: &[(Box3D<f64>, f64)]) -> (Box3D<f64>, f64) {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.1 > candidates[best].1 {
            best = i;
        }
    }
    candidates[best]
}
