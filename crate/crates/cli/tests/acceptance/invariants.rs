//! Attention normalisation, proposal permutation equivariance and the box
//! code round trip.

use std::f64::consts::PI;

use grounding_core::geometry::{normalize_angle, Box3D};
use grounding_model::bev::grid::{decode_box, encode_box};
use grounding_model::bev::{GridSpec, ProposalPolicy};
use grounding_model::graph::Graph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tiny;
use crate::{ensure, Outcome};

const TOL: f64 = 1e-6;

fn attention_rows(seed: u64, cameras: bool) -> Result<(usize, f64), String> {
    let model = tiny::model::<f64>(seed, cameras);
    let scene = tiny::scene(&model, seed);
    let text = tiny::embed::<f64>("watch the blue bus far away on the right");
    let mut g = Graph::new();
    let fw = model.forward(&mut g, &scene, &text, &ProposalPolicy::Peaks).map_err(|e| e.to_string())?;
    ensure!(fw.attention.len() == 4, "expected 4 attention blocks, got {}", fw.attention.len());
    let (mut rows, mut worst) = (0, 0f64);
    for block in &fw.attention {
        for &p in block {
            let v = g.value(p);
            let (r, c) = v.rows_cols();
            for i in 0..r {
                let row = &v.data()[i * c..(i + 1) * c];
                ensure!(row.iter().all(|x| *x >= 0.0), "negative attention weight");
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                rows += 1;
            }
        }
    }
    Ok((rows, worst))
}

fn equivariance(seed: u64) -> f64 {
    let model = tiny::model::<f64>(seed, false);
    let scene = tiny::scene(&model, seed);
    let text = tiny::embed::<f64>("look out for the white truck close to us");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells: Vec<usize> = (0..model.grid().cells()).collect();
    cells.shuffle(&mut rng);
    cells.truncate(4);
    let mut perm: Vec<usize> = (0..4).collect();
    perm.shuffle(&mut rng);
    let permuted: Vec<usize> = perm.iter().map(|&i| cells[i]).collect();
    let refined = |c: &[usize]| {
        let mut g = Graph::new();
        let fw = model.forward(&mut g, &scene, &text, &ProposalPolicy::Fixed(c.to_vec())).unwrap();
        let out = g.value(fw.refined).data().to_vec();
        let logits = g.value(fw.logits).data().to_vec();
        (out, logits)
    };
    let ((a, la), (b, lb)) = (refined(&cells), refined(&permuted));
    let d = model.config.width;
    let mut worst = 0f64;
    for (k, &src) in perm.iter().enumerate() {
        for j in 0..d {
            worst = worst.max((a[src * d + j] - b[k * d + j]).abs());
        }
        worst = worst.max((la[src] - lb[k]).abs());
    }
    worst
}

fn round_trip(n: usize) -> f64 {
    let spec = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0f64;
    for _ in 0..n {
        let b = Box3D::new(
            rng.gen_range(-53.0..53.0),
            rng.gen_range(-53.0..53.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(0.2..15.0),
            rng.gen_range(0.2..4.0),
            rng.gen_range(0.3..5.0),
            rng.gen_range(-PI..PI),
        )
        .unwrap();
        let (col, row) = spec.cell_of(b.x, b.y).unwrap();
        let d = decode_box(&encode_box(&b, col, row, &spec), col, row, &spec);
        for (p, q) in [(d.x, b.x), (d.y, b.y), (d.z, b.z), (d.l, b.l), (d.w, b.w), (d.h, b.h)] {
            worst = worst.max((p - q).abs());
        }
        worst = worst.max(normalize_angle(d.alpha - b.alpha).abs());
    }
    worst
}

pub fn run() -> Outcome {
    let (mut rows, mut row_err) = (0, 0f64);
    for seed in 0..5 {
        for cameras in [false, true] {
            let (r, e) = attention_rows(seed, cameras)?;
            rows += r;
            row_err = row_err.max(e);
        }
    }
    let perm_err = (0..5).map(equivariance).fold(0f64, f64::max);
    let boxes = 2000;
    let code_err = round_trip(boxes);
    let detail = format!(
        "{rows} attention rows, worst |sum - 1| {row_err:.1e}; permutation {perm_err:.1e}; \
         {boxes} box codes, worst round-trip error {code_err:.1e} (tol {TOL:.0e})"
    );
    ensure!(row_err <= TOL && perm_err <= TOL && code_err <= TOL, "{detail}");
    Ok(detail)
}
