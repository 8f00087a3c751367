//! The match head on linearly separable proposal features.

use grounding_model::baseline::{selection_accuracy, train_matcher, MatchExample, MatchHead, MatcherConfig};
use grounding_model::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const CLASSES: usize = 6;
const DIM: usize = 12;

/// The sentence one-hot names a class; only the positive proposal carries
/// that class in its feature one-hot.
fn separable(n: usize, seed: u64) -> Vec<MatchExample<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let c = rng.gen_range(0..CLASSES);
            let k = rng.gen_range(2..10);
            let positive = rng.gen_range(0..k);
            let mut sentence = vec![0.0f32; CLASSES];
            sentence[c] = 1.0;
            let mut feats = Vec::with_capacity(k * DIM);
            for i in 0..k {
                let cls = if i == positive { c } else { (c + rng.gen_range(1..CLASSES)) % CLASSES };
                let mut f: Vec<f32> = (0..DIM).map(|_| rng.gen_range(-0.1..0.1)).collect();
                f[cls] += 1.0;
                feats.extend(f);
            }
            MatchExample {
                sentence,
                features: Tensor::from_vec(&[k, DIM], feats),
                positive,
            }
        })
        .collect()
}

pub fn run() -> Outcome {
    // The training schedule is the default one: SGD, lr 0.01, batch 4, 20 epochs.
    let cfg = MatcherConfig::default();
    let train = separable(400, 61);
    let held_out = separable(200, 62);
    let mut head = MatchHead::<f32>::new(CLASSES, DIM, cfg.hidden, cfg.match_dim, cfg.seed).map_err(|e| e.to_string())?;
    let chance = train.iter().map(|e| 1.0 / e.features.shape()[0] as f64).sum::<f64>() / train.len() as f64;
    let curve = train_matcher(&mut head, &train, &cfg).map_err(|e| e.to_string())?;
    let acc = selection_accuracy(&head, &train).map_err(|e| e.to_string())?;
    let held = selection_accuracy(&head, &held_out).map_err(|e| e.to_string())?;
    let detail = format!(
        "{} epochs (sgd lr {}, batch {}), loss {:.3} -> {:.4}, train accuracy {acc:.3} (need 1.000), \
         held-out {held:.3}, chance {chance:.3}",
        curve.len(),
        cfg.lr,
        cfg.batch_size,
        curve[0],
        curve.last().unwrap()
    );
    ensure!(curve.len() == 20, "{detail}");
    ensure!(acc == 1.0, "{detail}");
    Ok(detail)
}
