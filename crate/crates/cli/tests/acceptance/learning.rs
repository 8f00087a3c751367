//! Desk-scale training: memorise a small set, then beat the reference
//! selectors on held-out scenes.

use std::collections::HashMap;
use std::time::Instant;

use grounding_core::datakit::synth::render_views;
use grounding_core::datakit::{synth_corpus, SynthConfig, SynthCorpus};
use grounding_core::evalkit::{accuracy, join, IouKind, PredictionRecord};
use grounding_core::textenc::{HashEncoder, TextEncoder};
use grounding_model::baseline::{
    detect_samples, match_examples, predict_matcher, reference_predictions, train_matcher, DetectorConfig, MatchHead,
    MatcherConfig, NoisyDetector, ReferenceMode,
};
use grounding_model::bev::{
    predict, BevConfig, BevGrounding, Dataset, GridSpec, ImageSpec, LrSchedule, Stage, TrainConfig, Trainer,
};

use crate::{ensure, Outcome};

const MARGIN: f64 = 0.15;
const BUDGET_SECS: f64 = 1800.0;
const OVERFIT: f64 = 0.9;

fn corpus(seed: u64, scenes: usize, prompts: usize) -> SynthCorpus {
    synth_corpus(&SynthConfig {
        seed,
        n_scenes: scenes,
        prompts_per_scene: prompts,
        image_width: 160,
        image_height: 90,
        ..Default::default()
    })
    .unwrap()
}

fn dataset(c: &SynthCorpus, model: &BevGrounding<f32>, enc: &dyn TextEncoder, images: bool) -> Dataset<f32> {
    let scenes: HashMap<_, _> = c.scenes.iter().map(|s| (s.scene_id.as_str(), s)).collect();
    Dataset::build(model, &c.samples, enc, |s| {
        let sc = scenes[s.scene_id.as_str()];
        Ok((sc.points.clone(), images.then(|| render_views(&sc.objects, &c.rig))))
    })
    .unwrap()
}

fn acc(preds: &[PredictionRecord], c: &SynthCorpus) -> f64 {
    accuracy(&join(preds, &c.samples).unwrap(), IouKind::Bev, 0.25).unwrap()
}

fn config(width: usize, downsample: usize) -> BevConfig {
    BevConfig {
        grid: GridSpec {
            cell: 2.4,
            ..Default::default()
        },
        width,
        heads: 4,
        proposals: 32,
        image: ImageSpec {
            downsample,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Best training accuracy over periodic evaluations of a lidar-only model.
fn overfit(enc: &dyn TextEncoder) -> f64 {
    let mut c = corpus(5, 20, 1);
    c.samples.truncate(20);
    let model = BevGrounding::<f32>::new(config(64, 4), enc.width(), None, 0).unwrap();
    let data = dataset(&c, &model, enc, false);
    let tc = TrainConfig {
        batch_size: 1,
        epochs: 100_000,
        max_steps: Some(2000),
        finetune_epochs: 0,
        schedule: LrSchedule::Cosine,
        ..Default::default()
    };
    let mut tr = Trainer::new(model, tc, None).unwrap();
    let (mut best, mut n) = (0f64, 0);
    while tr.step(&data).unwrap().is_some() {
        n += 1;
        if n % 250 == 0 {
            best = best.max(acc(&predict(&tr.model, &data).unwrap(), &c));
            if best >= OVERFIT {
                break;
            }
        }
    }
    best
}

pub fn run() -> Outcome {
    let t = Instant::now();
    let enc = HashEncoder::new(64, 0).unwrap();
    let memorised = overfit(&enc);

    let train = corpus(1, 1000, 3);
    let test = corpus(2, 500, 1);
    let model = BevGrounding::<f32>::new(config(32, 2), enc.width(), Some(&train.rig), 0).unwrap();
    let d_train = dataset(&train, &model, &enc, true);
    let d_test = dataset(&test, &model, &enc, true);
    let (lidar_steps, camera_steps) = (6000, 1500);
    let tc = TrainConfig {
        batch_size: 1,
        epochs: 100_000,
        max_steps: Some(lidar_steps),
        finetune_epochs: 100_000,
        finetune_lr: 1e-4,
        schedule: LrSchedule::Cosine,
        ..Default::default()
    };
    let mut tr = Trainer::new(model, tc, Some(train.rig.clone())).unwrap();
    let mut lidar_only = None;
    let mut done = 0;
    while let Some(log) = tr.step(&d_train).unwrap() {
        if log.stage == Stage::Camera {
            if lidar_only.is_none() {
                // Weights as they were when the lidar stage ended.
                let mut m = tr.model.cast::<f32>();
                m.use_images = false;
                lidar_only = Some(acc(&predict(&m, &d_test).unwrap(), &test));
            }
            done += 1;
            if done >= camera_steps {
                break;
            }
        }
    }
    let lidar_only = lidar_only.ok_or("camera stage never started")?;
    let full = acc(&predict(&tr.model, &d_test).unwrap(), &test);

    let detector = NoisyDetector::new(DetectorConfig::default());
    let test_props = detect_samples(&detector, &test.samples);
    let reference = |mode, seed| acc(&reference_predictions(mode, &test.samples, &test_props, seed).unwrap(), &test);
    let trials = 5;
    let pred_rand = (0..trials).map(|s| reference(ReferenceMode::PredRand, s)).sum::<f64>() / trials as f64;
    let gt_rand = (0..trials).map(|s| reference(ReferenceMode::GtRand, s)).sum::<f64>() / trials as f64;
    let pred_best = reference(ReferenceMode::PredBest, 0);

    let mcfg = MatcherConfig::default();
    let train_props = detect_samples(&detector, &train.samples);
    let (examples, _) = match_examples::<f32>(&train.samples, &train_props, &enc, mcfg.iou_threshold).unwrap();
    let feat = examples[0].features.shape()[1];
    let mut head = MatchHead::<f32>::new(enc.width(), feat, mcfg.hidden, mcfg.match_dim, mcfg.seed).unwrap();
    train_matcher(&mut head, &examples, &mcfg).unwrap();
    let matcher = acc(&predict_matcher(&head, &test.samples, &test_props, &enc).unwrap(), &test);

    let secs = t.elapsed().as_secs_f64();
    let detail = format!(
        "overfit 20 samples reached {memorised:.3} (need {OVERFIT}); held-out BEV Acc@0.25: -L {lidar_only:.3}, \
         full {full:.3}, Pred-Rand {pred_rand:.3}, Pred-Best {pred_best:.3} (need -L >= both + {MARGIN}, full >= -L); \
         GT-Rand {gt_rand:.3}, matcher {matcher:.3}; {lidar_steps}+{camera_steps} steps in {secs:.0} s \
         (budget {BUDGET_SECS:.0} s)"
    );
    ensure!(memorised >= OVERFIT, "{detail}");
    ensure!(lidar_only >= pred_rand + MARGIN && lidar_only >= pred_best + MARGIN, "{detail}");
    ensure!(full >= lidar_only, "{detail}");
    ensure!(secs < BUDGET_SECS, "{detail}");
    Ok(detail)
}
