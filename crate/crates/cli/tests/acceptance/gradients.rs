//! Central finite differences against the recorded backward pass.

use grounding_model::baseline::{example_loss, MatchExample, MatchHead};
use grounding_model::bev::ProposalPolicy;
use grounding_model::graph::{Graph, Var};
use grounding_model::losses;
use grounding_model::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tiny;
use crate::{ensure, Outcome};

const TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [10, 11, 12, 13, 14];

/// `|a - b| / max(|a|, |b|)` over whole vectors.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn check_input(x0: &[f64], f: impl Fn(&mut Graph<f64>, Var) -> Var) -> f64 {
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

fn uniform(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn matcher_error(seed: u64) -> f64 {
    let mut head = MatchHead::<f64>::new(6, 5, 16, 8, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let ex = MatchExample {
        sentence: (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        features: Tensor::from_vec(&[9, 5], (0..45).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        positive: seed as usize % 9,
    };
    let mut g = Graph::new();
    let loss = example_loss(&mut g, &head, &ex).unwrap();
    let mut analytic = head.params.zero_grads();
    g.backward(loss).accumulate(&mut analytic);
    let h = 1e-5;
    let mut fd = Vec::new();
    let ids: Vec<_> = head.params.ids().collect();
    for id in ids {
        for j in 0..head.params.get(id).len() {
            let mut eval = |delta: f64| {
                head.params.get_mut(id).data_mut()[j] += delta;
                let mut g = Graph::new();
                let l = example_loss(&mut g, &head, &ex).unwrap();
                head.params.get_mut(id).data_mut()[j] -= delta;
                g.value(l).data()[0]
            };
            fd.push((eval(h) - eval(-h)) / (2.0 * h));
        }
    }
    let analytic: Vec<f64> = analytic.into_iter().flatten().collect();
    rel_err(&analytic, &fd)
}

/// Six sampled entries of every parameter tensor of the tiny model, image
/// branch on.
fn model_error(seed: u64) -> f64 {
    let mut model = tiny::model::<f64>(seed, true);
    let scene = tiny::scene(&model, seed);
    let text = tiny::embed::<f64>("the red car on the left, close to us");
    let gt = tiny::target(seed);
    let cells = vec![17, 100, 130, 201];
    let loss = |m: &grounding_model::bev::BevGrounding<f64>| {
        let mut g = Graph::new();
        let fw = m.forward(&mut g, &scene, &text, &ProposalPolicy::Fixed(cells.clone())).unwrap();
        let total = m.loss(&mut g, &fw, &gt, Some(1)).unwrap().total;
        (g, total)
    };
    let (g, total) = loss(&model);
    let mut analytic = model.params.zero_grads();
    g.backward(total).accumulate(&mut analytic);
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut an, mut fd) = (Vec::new(), Vec::new());
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let n = model.params.get(id).len();
        let picks: Vec<usize> = if n <= 6 { (0..n).collect() } else { (0..6).map(|_| rng.gen_range(0..n)).collect() };
        for j in picks {
            let mut eval = |delta: f64| {
                model.params.get_mut(id).data_mut()[j] += delta;
                let (g, l) = loss(&model);
                model.params.get_mut(id).data_mut()[j] -= delta;
                g.value(l).data()[0]
            };
            fd.push((eval(h) - eval(-h)) / (2.0 * h));
            an.push(analytic[id.0][j]);
        }
    }
    rel_err(&an, &fd)
}

pub fn run() -> Outcome {
    let mut worst = [0f64; 6];
    for seed in SEEDS {
        let z = uniform(seed, 40, -4.0, 4.0);
        let mut t = uniform(seed + 100, 40, 0.0, 0.99);
        t[3] = 1.0;
        t[17] = 1.0;
        worst[0] = worst[0].max(check_input(&z, |g, v| losses::gaussian_focal(g, v, &t, 2.0, 4.0)));
        let pos: Vec<bool> = (0..40).map(|i| i % 7 == seed as usize % 7).collect();
        worst[1] = worst[1].max(check_input(&z, |g, v| losses::sigmoid_focal(g, v, &pos, 2.0, 0.25)));
        let (p, q) = (uniform(seed + 200, 8, -3.0, 3.0), uniform(seed + 300, 8, -3.0, 3.0));
        worst[2] = worst[2].max(check_input(&p, |g, v| losses::l1_mean(g, v, &q)));
        let s = uniform(seed + 400, 7, -4.0, 4.0);
        worst[3] = worst[3].max(check_input(&s, |g, v| losses::softmax_ce(g, v, seed as usize % 7)));
        worst[4] = worst[4].max(matcher_error(seed));
        worst[5] = worst[5].max(model_error(seed));
    }
    let names = ["gaussian focal", "focal cls", "l1 reg", "cross-entropy", "matcher", "tiny model"];
    let detail = names
        .iter()
        .zip(worst)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let detail = format!("worst relative error over {} seeds: {detail} (tol {TOL:.0e})", SEEDS.len());
    ensure!(worst.iter().all(|e| *e <= TOL), "{detail}");
    Ok(detail)
}
