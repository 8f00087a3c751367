//! Central finite differences against the recorded backward pass.

mod common;

use common::*;
use grounding_model::baseline::{example_loss, MatchExample, MatchHead};
use grounding_model::bev::{BevGrounding, ProposalPolicy, SceneInput};
use grounding_model::graph::Graph;
use grounding_model::losses;
use grounding_model::tensor::Tensor;
use grounding_core::geometry::Box3D;
use grounding_core::textenc::TextEmbeddings;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Gradient of a scalar function of one input vector: analytic vs FD.
fn check_input(x0: &[f64], f: impl Fn(&mut Graph<f64>, grounding_model::graph::Var) -> grounding_model::graph::Var) -> f64 {
    let run = |x: &[f64]| {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::from_vec(&[x.len(), 1], x.to_vec()));
        let out = f(&mut g, v);
        (g, v, out)
    };
    let (g, v, out) = run(x0);
    let analytic = g.backward(out).wrt(v).unwrap().to_vec();
    let h = 1e-6;
    let fd: Vec<f64> = (0..x0.len())
        .map(|i| {
            let mut xp = x0.to_vec();
            xp[i] += h;
            let mut xm = x0.to_vec();
            xm[i] -= h;
            let (gp, _, op) = run(&xp);
            let (gm, _, om) = run(&xm);
            (gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * h)
        })
        .collect();
    rel_err(&analytic, &fd)
}

fn logits(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect()
}

#[test]
fn gaussian_focal_gradient() {
    for seed in SEEDS {
        let z = logits(seed, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut t: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..0.99)).collect();
        t[3] = 1.0;
        t[17] = 1.0;
        let e = check_input(&z, |g, v| losses::gaussian_focal(g, v, &t, 2.0, 4.0));
        assert!(e <= TOL, "seed {seed}: {e}");
    }
}

#[test]
fn sigmoid_focal_gradient() {
    for seed in SEEDS {
        let z = logits(seed, 12);
        let pos: Vec<bool> = (0..12).map(|i| i % 5 == seed as usize % 5).collect();
        let e = check_input(&z, |g, v| losses::sigmoid_focal(g, v, &pos, 2.0, 0.25));
        assert!(e <= TOL, "seed {seed}: {e}");
    }
}

#[test]
fn l1_gradient() {
    for seed in SEEDS {
        let z = logits(seed, 8);
        let t = logits(seed + 50, 8);
        let e = check_input(&z, |g, v| losses::l1_mean(g, v, &t));
        assert!(e <= TOL, "seed {seed}: {e}");
    }
}

#[test]
fn softmax_ce_gradient() {
    for seed in SEEDS {
        let z = logits(seed, 7);
        let e = check_input(&z, |g, v| losses::softmax_ce(g, v, seed as usize % 7));
        assert!(e <= TOL, "seed {seed}: {e}");
    }
}

#[test]
fn matcher_cross_entropy_gradient() {
    for seed in SEEDS {
        let mut head = MatchHead::<f64>::new(6, 5, 16, 8, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let ex = MatchExample {
            sentence: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            features: Tensor::from_vec(&[9, 5], (0..45).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            positive: 4,
        };
        let mut g = Graph::new();
        let loss = example_loss(&mut g, &head, &ex).unwrap();
        let mut analytic = head.params.zero_grads();
        g.backward(loss).accumulate(&mut analytic);
        let h = 1e-3;
        let mut fd = Vec::new();
        let ids: Vec<_> = head.params.ids().collect();
        for id in ids {
            for j in 0..head.params.get(id).len() {
                let eval = |delta: f64, head: &mut MatchHead<f64>| {
                    head.params.get_mut(id).data_mut()[j] += delta;
                    let mut g = Graph::new();
                    let l = example_loss(&mut g, head, &ex).unwrap();
                    head.params.get_mut(id).data_mut()[j] -= delta;
                    g.value(l).data()[0]
                };
                fd.push((eval(h, &mut head) - eval(-h, &mut head)) / (2.0 * h));
            }
        }
        let analytic: Vec<f64> = analytic.into_iter().flatten().collect();
        let e = rel_err(&analytic, &fd);
        assert!(e <= TOL, "seed {seed}: {e}");
    }
}

fn model_loss(
    model: &BevGrounding<f64>,
    scene: &SceneInput<f64>,
    text: &TextEmbeddings<f64>,
    cells: &[usize],
    gt: &Box3D<f64>,
) -> (Graph<f64>, grounding_model::graph::Var) {
    let mut g = Graph::new();
    let fw = model
        .forward(&mut g, scene, text, &ProposalPolicy::Fixed(cells.to_vec()))
        .unwrap();
    let terms = model.loss(&mut g, &fw, gt, Some(1)).unwrap();
    (g, terms.total)
}

#[test]
fn full_model_gradient() {
    for seed in SEEDS {
        let mut model = tiny_model::<f64>(seed, true);
        jitter(&mut model, seed, 0.05);
        let scene = random_scene(&model, seed);
        let text = embed::<f64>("the red car on the left, close to us");
        let gt = target_box(seed);
        let cells = [17, 100, 130, 201];
        let (g, total) = model_loss(&model, &scene, &text, &cells, &gt);
        let mut analytic = model.params.zero_grads();
        g.backward(total).accumulate(&mut analytic);

        // Every tensor is checked on a fixed sample of its entries.
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<_> = model.params.ids().collect();
        let (mut an, mut fd) = (Vec::new(), Vec::new());
        for id in ids {
            let n = model.params.get(id).len();
            let picks: Vec<usize> = if n <= 6 { (0..n).collect() } else { (0..6).map(|_| rng.gen_range(0..n)).collect() };
            for j in picks {
                let mut eval = |delta: f64| {
                    model.params.get_mut(id).data_mut()[j] += delta;
                    let (g, l) = model_loss(&model, &scene, &text, &cells, &gt);
                    model.params.get_mut(id).data_mut()[j] -= delta;
                    g.value(l).data()[0]
                };
                let d = (eval(h) - eval(-h)) / (2.0 * h);
                fd.push(d);
                an.push(analytic[id.0][j]);
            }
        }
        let e = rel_err(&an, &fd);
        assert!(e <= TOL, "seed {seed}: {e}");
        assert!(an.iter().any(|v| *v != 0.0));
    }
}
