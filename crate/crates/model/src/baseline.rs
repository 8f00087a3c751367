//! Detect-then-match: score detector proposals against the sentence
//! embedding with two small perceptrons, plus the reference selectors.

use std::collections::HashMap;
use std::path::Path;

use grounding_core::datakit::{read_jsonl, write_jsonl, GroundingSample, SceneObject};
use grounding_core::evalkit::PredictionRecord;
use grounding_core::geometry::{iou_3d, normalize_angle, Box3D};
use grounding_core::labels::{Category, Color};
use grounding_core::textenc::{EncoderSpec, TextEncoder};
use grounding_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::graph::{sigmoid, Graph, Var};
use crate::losses;
use crate::nn::{Init, Linear};
use crate::optim::Sgd;
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::Real;

/// Per-frame proposal budget.
pub const MAX_PROPOSALS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: Box3D<f64>,
    pub score: f64,
    pub category: Category,
    pub feature: Vec<f64>,
}

impl Proposal {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Format(format!("proposal score {} outside [0, 1]", self.score)));
        }
        if self.feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite proposal feature".into()));
        }
        Ok(())
    }
}

/// One line of a proposal file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalFrame {
    pub frame_id: String,
    pub proposals: Vec<Proposal>,
}

impl ProposalFrame {
    /// Keeps the `cap` highest-scoring proposals; equal scores keep file order.
    pub fn cap(&mut self, cap: usize) {
        if self.proposals.len() <= cap {
            return;
        }
        let mut idx: Vec<usize> = (0..self.proposals.len()).collect();
        idx.sort_by(|&a, &b| self.proposals[b].score.total_cmp(&self.proposals[a].score).then(a.cmp(&b)));
        idx.truncate(cap);
        idx.sort_unstable();
        let mut keep = vec![false; self.proposals.len()];
        for i in idx {
            keep[i] = true;
        }
        let mut k = keep.iter();
        self.proposals.retain(|_| *k.next().unwrap());
    }
}

/// Reads a proposal file, validating entries and applying the budget.
pub fn read_proposals(path: &Path) -> Result<Vec<ProposalFrame>> {
    let mut frames: Vec<ProposalFrame> = read_jsonl(path)?;
    let width = frames.iter().flat_map(|f| f.proposals.first()).map(|p| p.feature.len()).next();
    for f in &mut frames {
        for p in &f.proposals {
            p.validate()?;
            if Some(p.feature.len()) != width {
                return Err(Error::Format(format!("{}: inconsistent feature width", f.frame_id)));
            }
        }
        f.cap(MAX_PROPOSALS);
    }
    Ok(frames)
}

pub fn write_proposals(path: &Path, frames: &[ProposalFrame]) -> Result<()> {
    write_jsonl(path, frames)
}

/// Width of the synthetic detector's features: class and color one-hots,
/// then position, range, bearing and log-size.
pub const DETECTOR_FEATURES: usize = 10 + 6 + 9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub seed: u64,
    /// Probability that an annotated object produces no proposal.
    pub miss_rate: f64,
    /// Center jitter, meters.
    pub center_sigma: f64,
    /// Relative size jitter.
    pub size_sigma: f64,
    pub yaw_sigma: f64,
    /// Probability of reporting the wrong class.
    pub confusion: f64,
    pub feature_noise: f64,
    /// Inclusive bounds on spurious proposals per frame.
    pub distractors: (usize, usize),
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            miss_rate: 0.05,
            center_sigma: 0.15,
            size_sigma: 0.05,
            yaw_sigma: 0.05,
            confusion: 0.05,
            feature_noise: 0.05,
            distractors: (0, 4),
        }
    }
}

/// Stand-in detector: annotated boxes with noise, plus low-scoring clutter.
#[derive(Clone, Debug)]
pub struct NoisyDetector {
    pub config: DetectorConfig,
}

impl NoisyDetector {
    pub fn new(config: DetectorConfig) -> Self {
        Self { config }
    }

    /// Proposals for frame number `index`; deterministic in (seed, index).
    pub fn detect(&self, index: usize, frame_id: &str, objects: &[SceneObject]) -> ProposalFrame {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        rng.set_stream(index as u64);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let mut proposals = Vec::new();
        for o in objects {
            if rng.gen::<f64>() < c.miss_rate {
                continue;
            }
            let b = &o.bbox;
            let s = |rng: &mut ChaCha8Rng| (c.size_sigma * unit.sample(rng)).exp();
            let bbox = Box3D {
                x: b.x + c.center_sigma * unit.sample(&mut rng),
                y: b.y + c.center_sigma * unit.sample(&mut rng),
                z: b.z + c.center_sigma * unit.sample(&mut rng),
                l: b.l * s(&mut rng),
                w: b.w * s(&mut rng),
                h: b.h * s(&mut rng),
                alpha: normalize_angle(b.alpha + c.yaw_sigma * unit.sample(&mut rng)),
            };
            let category = if rng.gen::<f64>() < c.confusion {
                *Category::ALL.choose(&mut rng).unwrap()
            } else {
                o.category
            };
            let score = rng.gen_range(0.3..0.95);
            let feature = detector_feature(&bbox, category, o.color, c.feature_noise, &mut rng);
            proposals.push(Proposal { bbox, score, category, feature });
        }
        let (lo, hi) = c.distractors;
        for _ in 0..rng.gen_range(lo..=hi.max(lo)) {
            let category = *Category::ALL.choose(&mut rng).unwrap();
            let (l, w, h) = (rng.gen_range(0.5..5.0), rng.gen_range(0.5..2.5), rng.gen_range(0.8..3.0));
            let bbox = Box3D {
                x: rng.gen_range(-50.0..50.0),
                y: rng.gen_range(-50.0..50.0),
                z: -1.8 + h / 2.0,
                l,
                w,
                h,
                alpha: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            };
            let color = Some(*Color::ALL.choose(&mut rng).unwrap());
            let score = rng.gen_range(0.05..0.4);
            let feature = detector_feature(&bbox, category, color, c.feature_noise, &mut rng);
            proposals.push(Proposal { bbox, score, category, feature });
        }
        let mut frame = ProposalFrame {
            frame_id: frame_id.to_string(),
            proposals,
        };
        frame.cap(MAX_PROPOSALS);
        frame
    }
}

/// Runs the detector once per distinct scene of `samples`, in order of
/// first appearance. The noise stream is keyed by the scene id, so a scene
/// gets the same proposals whichever file it is read from.
pub fn detect_samples(detector: &NoisyDetector, samples: &[GroundingSample]) -> Vec<ProposalFrame> {
    let mut seen = std::collections::HashSet::new();
    samples
        .iter()
        .filter(|s| seen.insert(s.scene_id.as_str()))
        .map(|s| detector.detect(scene_stream(&s.scene_id), &s.scene_id, &s.scene_boxes))
        .collect()
}

/// 64-bit FNV-1a of the scene id.
fn scene_stream(id: &str) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h as usize
}

fn detector_feature(b: &Box3D<f64>, category: Category, color: Option<Color>, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut f = vec![0.0; DETECTOR_FEATURES];
    f[category.index()] = 1.0;
    if let Some(c) = color {
        f[10 + Color::ALL.iter().position(|&k| k == c).unwrap()] = 1.0;
    }
    let az = b.azimuth();
    let geo = [
        b.x / 54.0,
        b.y / 54.0,
        b.planar_range() / 54.0,
        az.sin(),
        az.cos(),
        b.z,
        b.l.ln(),
        b.w.ln(),
        b.h.ln(),
    ];
    f[16..].copy_from_slice(&geo);
    let unit = Normal::new(0.0, 1.0).unwrap();
    for v in &mut f {
        *v += noise * unit.sample(rng);
    }
    f
}

/// The two perceptrons of the matching score `<E_l(f_sen), E_o(f_obj)>`.
pub struct MatchHead<T: Real> {
    pub params: ParamStore<T>,
    pub text_dim: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub match_dim: usize,
    el1: Linear,
    el2: Linear,
    eo1: Linear,
    eo2: Linear,
}

impl<T: Real> MatchHead<T> {
    pub fn new(text_dim: usize, feature_dim: usize, hidden: usize, match_dim: usize, seed: u64) -> Result<Self> {
        if text_dim == 0 || feature_dim == 0 || hidden == 0 || match_dim == 0 {
            return Err(Error::InvalidArgument("match head widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let r = &mut rng;
        Ok(Self {
            el1: Linear::new(&mut s, "lang.fc1", text_dim, hidden, true, Init::He, r),
            el2: Linear::new(&mut s, "lang.fc2", hidden, match_dim, true, Init::Lecun, r),
            eo1: Linear::new(&mut s, "obj.fc1", feature_dim, hidden, true, Init::He, r),
            eo2: Linear::new(&mut s, "obj.fc2", hidden, match_dim, true, Init::Lecun, r),
            params: s,
            text_dim,
            feature_dim,
            hidden,
            match_dim,
        })
    }

    /// Records the scores of `features[K, d_o]` against `sentence[d_t]`
    /// as a `[K, 1]` node.
    pub fn forward(&self, g: &mut Graph<T>, sentence: &[T], features: &Tensor<T>) -> Result<Var> {
        let (k, d) = features.rows_cols();
        if sentence.len() != self.text_dim || d != self.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "match head expects text {} / features {}, got {} / {d}",
                self.text_dim,
                self.feature_dim,
                sentence.len()
            )));
        }
        if k == 0 {
            return Err(Error::Empty("proposals"));
        }
        let p = &self.params;
        let t = g.input(Tensor::from_vec(&[1, self.text_dim], sentence.to_vec()));
        let t = self.el1.forward(g, p, t);
        let t = g.relu(t);
        let lang = self.el2.forward(g, p, t);
        let o = g.input(features.clone());
        let o = self.eo1.forward(g, p, o);
        let o = g.relu(o);
        let obj = self.eo2.forward(g, p, o);
        Ok(g.matmul_bt(obj, lang))
    }

    pub fn scores(&self, sentence: &[T], features: &Tensor<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let s = self.forward(&mut g, sentence, features)?;
        Ok(g.value(s).data().to_vec())
    }
}

/// Index of the largest score, lowest index on ties.
pub fn argmax<T: Real>(scores: &[T]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.map_or(true, |b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Feature rows of a frame as a `[K, d_o]` tensor.
pub fn feature_matrix<T: Real>(proposals: &[Proposal]) -> Tensor<T> {
    let d = proposals.first().map_or(0, |p| p.feature.len());
    let data = proposals.iter().flat_map(|p| p.feature.iter().map(|v| T::lit(*v))).collect();
    Tensor::from_vec(&[proposals.len(), d], data)
}

/// Scores and selects for one prompt; `None` when the frame is empty.
pub fn match_scores<T: Real>(head: &MatchHead<T>, sentence: &[T], proposals: &[Proposal]) -> Result<(Vec<T>, usize)> {
    if proposals.is_empty() {
        return Err(Error::Empty("proposals"));
    }
    let s = head.scores(sentence, &feature_matrix(proposals))?;
    let best = argmax(&s).unwrap();
    Ok((s, best))
}

/// One training prompt: sentence embedding, proposal features and the
/// index of the positive proposal.
#[derive(Clone, Debug)]
pub struct MatchExample<T> {
    pub sentence: Vec<T>,
    pub features: Tensor<T>,
    pub positive: usize,
}

/// Proposal with the highest 3D IoU to `gt`, if it reaches `threshold`.
pub fn positive_proposal(proposals: &[Proposal], gt: &Box3D<f64>, threshold: f64) -> Option<usize> {
    let ious: Vec<f64> = proposals.iter().map(|p| iou_3d(&p.bbox, gt)).collect();
    let best = argmax(&ious)?;
    (ious[best] >= threshold).then_some(best)
}

fn frames_by_id(frames: &[ProposalFrame]) -> HashMap<&str, &ProposalFrame> {
    frames.iter().map(|f| (f.frame_id.as_str(), f)).collect()
}

/// Pairs samples with their frame's proposals (keyed by scene id). Returns
/// the examples and the number of skipped samples.
pub fn match_examples<T: Real>(
    samples: &[GroundingSample],
    frames: &[ProposalFrame],
    encoder: &dyn TextEncoder,
    threshold: f64,
) -> Result<(Vec<MatchExample<T>>, usize)> {
    let by_id = frames_by_id(frames);
    let mut out = Vec::new();
    let mut skipped = 0;
    for s in samples {
        let Some(f) = by_id.get(s.scene_id.as_str()) else {
            skipped += 1;
            continue;
        };
        let Some(positive) = positive_proposal(&f.proposals, &s.referred, threshold) else {
            skipped += 1;
            continue;
        };
        let emb = encoder.encode(&s.prompt)?;
        out.push(MatchExample {
            sentence: emb.sentence.iter().map(|v| T::lit(*v)).collect(),
            features: feature_matrix(&f.proposals),
            positive,
        });
    }
    Ok((out, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Minimum 3D IoU for a proposal to serve as the positive.
    pub iou_threshold: f64,
    pub hidden: usize,
    pub match_dim: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            batch_size: 4,
            lr: 0.01,
            momentum: 0.0,
            iou_threshold: 0.25,
            hidden: 256,
            match_dim: 128,
        }
    }
}

/// One named weight array of a stored matcher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON form of a trained match head and the encoder it was trained with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatcherFile {
    pub encoder: EncoderSpec,
    pub text_dim: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub match_dim: usize,
    /// Mean cross-entropy per epoch.
    #[serde(default)]
    pub loss_curve: Vec<f64>,
    pub params: Vec<NamedArray>,
}

impl MatcherFile {
    pub fn from_head<T: Real>(head: &MatchHead<T>, encoder: EncoderSpec, loss_curve: Vec<f64>) -> Self {
        let p = &head.params;
        let params = p
            .ids()
            .map(|id| NamedArray {
                name: p.name(id).to_string(),
                shape: p.get(id).shape().to_vec(),
                data: p.get(id).data().iter().map(|v| v.to_f64().unwrap()).collect(),
            })
            .collect();
        Self {
            encoder,
            text_dim: head.text_dim,
            feature_dim: head.feature_dim,
            hidden: head.hidden,
            match_dim: head.match_dim,
            loss_curve,
            params,
        }
    }

    pub fn to_head<T: Real>(&self) -> Result<MatchHead<T>> {
        let mut head = MatchHead::new(self.text_dim, self.feature_dim, self.hidden, self.match_dim, 0)?;
        let ids: Vec<_> = head.params.ids().collect();
        if ids.len() != self.params.len() {
            return Err(Error::Format(format!("matcher has {} arrays, expected {}", self.params.len(), ids.len())));
        }
        for id in ids {
            let name = head.params.name(id).to_string();
            let a = self
                .params
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| Error::Format(format!("matcher is missing `{name}`")))?;
            if a.shape != head.params.get(id).shape() || a.data.len() != a.shape.iter().product::<usize>() {
                return Err(Error::Format(format!("matcher array `{name}` has shape {:?}", a.shape)));
            }
            *head.params.get_mut(id) = Tensor::from_vec(&a.shape, a.data.iter().map(|v| T::lit(*v)).collect());
        }
        Ok(head)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Cross-entropy of one example, recorded on `g`.
pub fn example_loss<T: Real>(g: &mut Graph<T>, head: &MatchHead<T>, ex: &MatchExample<T>) -> Result<Var> {
    let s = head.forward(g, &ex.sentence, &ex.features)?;
    Ok(losses::softmax_ce(g, s, ex.positive))
}

/// Mini-batch SGD over the head's parameters only.
pub fn train_matcher<T: Real>(
    head: &mut MatchHead<T>,
    examples: &[MatchExample<T>],
    config: &MatcherConfig,
) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Empty("matcher training set"));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut opt = Sgd::new(&head.params, config.lr, config.momentum);
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = head.params.zero_grads();
            for &i in batch {
                let mut g = Graph::new();
                let loss = example_loss(&mut g, head, &examples[i])?;
                total += g.value(loss).data()[0].to_f64().unwrap();
                g.backward(loss).accumulate(&mut grads);
            }
            let scale = T::one() / T::from_usize(batch.len()).unwrap();
            for v in grads.iter_mut().flatten() {
                *v *= scale;
            }
            opt.step(&mut head.params, &grads);
        }
        let mean = total / examples.len() as f64;
        log::info!("matcher epoch {epoch}: loss {mean:.4}");
        curve.push(mean);
    }
    Ok(curve)
}

/// Fraction of examples whose positive gets the top score.
pub fn selection_accuracy<T: Real>(head: &MatchHead<T>, examples: &[MatchExample<T>]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("examples"));
    }
    let mut hits = 0;
    for ex in examples {
        let s = head.scores(&ex.sentence, &ex.features)?;
        hits += usize::from(argmax(&s) == Some(ex.positive));
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// One prediction per sample: the top-scoring proposal of its frame.
pub fn predict_matcher<T: Real>(
    head: &MatchHead<T>,
    samples: &[GroundingSample],
    frames: &[ProposalFrame],
    encoder: &dyn TextEncoder,
) -> Result<Vec<PredictionRecord>> {
    let by_id = frames_by_id(frames);
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let f = frame_for(&by_id, s)?;
        let emb = encoder.encode(&s.prompt)?;
        let sentence: Vec<T> = emb.sentence.iter().map(|v| T::lit(*v)).collect();
        let (scores, best) = match_scores(head, &sentence, &f.proposals)?;
        out.push(PredictionRecord {
            sample_id: s.sample_id.clone(),
            bbox: f.proposals[best].bbox,
            confidence: sigmoid(scores[best]).to_f64().unwrap_or(0.0),
        });
    }
    Ok(out)
}

fn frame_for<'a>(by_id: &HashMap<&str, &'a ProposalFrame>, s: &GroundingSample) -> Result<&'a ProposalFrame> {
    by_id
        .get(s.scene_id.as_str())
        .copied()
        .ok_or_else(|| Error::Integrity(format!("{}: no proposals for frame {}", s.sample_id, s.scene_id)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    GtRand,
    PredRand,
    PredBest,
}

impl std::str::FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gt-rand" => Ok(Self::GtRand),
            "pred-rand" => Ok(Self::PredRand),
            "pred-best" => Ok(Self::PredBest),
            _ => Err(Error::InvalidArgument(format!("unknown reference mode `{s}`"))),
        }
    }
}

/// Picks a box without reading the prompt.
pub fn reference_select<R: Rng>(
    mode: ReferenceMode,
    sample: &GroundingSample,
    proposals: Option<&[Proposal]>,
    rng: &mut R,
) -> Result<(Box3D<f64>, f64)> {
    match mode {
        ReferenceMode::GtRand => {
            let o = sample.scene_boxes.choose(rng).ok_or(Error::Empty("scene boxes"))?;
            Ok((o.bbox, 1.0))
        }
        ReferenceMode::PredRand => {
            let p = proposals.unwrap_or(&[]).choose(rng).ok_or(Error::Empty("proposals"))?;
            Ok((p.bbox, p.score))
        }
        ReferenceMode::PredBest => {
            let ps = proposals.unwrap_or(&[]);
            let scores: Vec<f64> = ps.iter().map(|p| p.score).collect();
            let i = argmax(&scores).ok_or(Error::Empty("proposals"))?;
            Ok((ps[i].bbox, ps[i].score))
        }
    }
}

/// Reference predictions for every sample, one seeded stream for the run.
pub fn reference_predictions(
    mode: ReferenceMode,
    samples: &[GroundingSample],
    frames: &[ProposalFrame],
    seed: u64,
) -> Result<Vec<PredictionRecord>> {
    let by_id = frames_by_id(frames);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let props = match mode {
                ReferenceMode::GtRand => None,
                _ => Some(frame_for(&by_id, s)?.proposals.as_slice()),
            };
            let (bbox, confidence) = reference_select(mode, s, props, &mut rng)?;
            Ok(PredictionRecord {
                sample_id: s.sample_id.clone(),
                bbox,
                confidence,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prop(score: f64) -> Proposal {
        Proposal {
            bbox: Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap(),
            score,
            category: Category::Car,
            feature: vec![0.0; 3],
        }
    }

    #[test]
    fn cap_keeps_highest_scores_in_file_order() {
        let mut f = ProposalFrame {
            frame_id: "f".into(),
            proposals: [0.2, 0.9, 0.5, 0.9, 0.1].iter().map(|&s| prop(s)).collect(),
        };
        f.cap(3);
        let s: Vec<f64> = f.proposals.iter().map(|p| p.score).collect();
        assert_eq!(s, [0.9, 0.5, 0.9]);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax::<f64>(&[]), None);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("Pred-Best".parse::<ReferenceMode>().unwrap(), ReferenceMode::PredBest);
        assert!("best".parse::<ReferenceMode>().is_err());
    }
}
