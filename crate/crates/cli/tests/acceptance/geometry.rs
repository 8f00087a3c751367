//! IoU against point-sampling oracles, plus symmetry and rigid invariance.

use grounding_core::geometry::{bev_iou, iou_3d, normalize_angle};
use grounding_core::Box3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

const PAIRS: usize = 200;
const SAMPLES: usize = 1_000_000;
const MC_TOL: f64 = 0.01;
const EXACT_TOL: f64 = 1e-9;

fn random_box(rng: &mut ChaCha8Rng, near: Option<&Box3>) -> Box3 {
    let (cx, cy, cz) = near.map_or((0.0, 0.0, 0.0), |b| (b.x, b.y, b.z));
    Box3::new(
        cx + rng.gen_range(-2.5..2.5),
        cy + rng.gen_range(-2.5..2.5),
        cz + rng.gen_range(-1.0..1.0),
        rng.gen_range(0.5..6.0),
        rng.gen_range(0.5..3.0),
        rng.gen_range(0.5..3.0),
        rng.gen_range(-3.2..3.2),
    )
    .unwrap()
}

fn inside_footprint(b: &Box3, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - b.x, y - b.y);
    let (s, c) = b.alpha.sin_cos();
    (c * dx + s * dy).abs() <= b.l / 2.0 && (-s * dx + c * dy).abs() <= b.w / 2.0
}

fn inside(b: &Box3, p: [f64; 3]) -> bool {
    inside_footprint(b, p[0], p[1]) && (p[2] - b.z).abs() <= b.h / 2.0
}

/// Uniform samples over a region holding both boxes.
fn sampled_iou(a: &Box3, b: &Box3, volumetric: bool, rng: &mut ChaCha8Rng) -> f64 {
    let r = |b: &Box3| (b.l * b.l + b.w * b.w).sqrt() / 2.0;
    let lo = [(a.x - r(a)).min(b.x - r(b)), (a.y - r(a)).min(b.y - r(b)), (a.z - a.h / 2.0).min(b.z - b.h / 2.0)];
    let hi = [(a.x + r(a)).max(b.x + r(b)), (a.y + r(a)).max(b.y + r(b)), (a.z + a.h / 2.0).max(b.z + b.h / 2.0)];
    let (mut union, mut both) = (0usize, 0usize);
    for _ in 0..SAMPLES {
        let (x, y) = (rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]));
        let (ia, ib) = if volumetric {
            let z = rng.gen_range(lo[2]..hi[2]);
            (inside(a, [x, y, z]), inside(b, [x, y, z]))
        } else {
            (inside_footprint(a, x, y), inside_footprint(b, x, y))
        };
        union += (ia || ib) as usize;
        both += (ia && ib) as usize;
    }
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

fn moved(b: &Box3, theta: f64, t: [f64; 3]) -> Box3 {
    let (s, c) = theta.sin_cos();
    Box3 {
        x: c * b.x - s * b.y + t[0],
        y: s * b.x + c * b.y + t[1],
        z: b.z + t[2],
        alpha: normalize_angle(b.alpha + theta),
        ..*b
    }
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_bev, mut worst_3d, mut worst_sym, mut worst_rigid) = (0f64, 0f64, 0f64, 0f64);
    let mut overlapping = 0;
    for _ in 0..PAIRS {
        let a = random_box(&mut rng, None);
        let b = random_box(&mut rng, Some(&a));
        let (bev, vol) = (bev_iou(&a, &b), iou_3d(&a, &b));
        overlapping += (vol > 0.0) as usize;
        worst_bev = worst_bev.max((bev - sampled_iou(&a, &b, false, &mut rng)).abs());
        worst_3d = worst_3d.max((vol - sampled_iou(&a, &b, true, &mut rng)).abs());
        worst_sym = worst_sym.max((bev - bev_iou(&b, &a)).abs()).max((vol - iou_3d(&b, &a)).abs());
        let theta = rng.gen_range(-3.2..3.2);
        let t = [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0), rng.gen_range(-2.0..2.0)];
        let (ma, mb) = (moved(&a, theta, t), moved(&b, theta, t));
        worst_rigid = worst_rigid.max((bev - bev_iou(&ma, &mb)).abs()).max((vol - iou_3d(&ma, &mb)).abs());
    }
    let detail = format!(
        "{PAIRS} pairs ({overlapping} overlapping), worst |bev - sampled| {worst_bev:.4}, |3d - sampled| {worst_3d:.4} \
         (tol {MC_TOL}); symmetry {worst_sym:.1e}, rigid motion {worst_rigid:.1e} (tol {EXACT_TOL:.0e})"
    );
    ensure!(worst_bev <= MC_TOL && worst_3d <= MC_TOL, "{detail}");
    ensure!(worst_sym <= EXACT_TOL && worst_rigid <= EXACT_TOL, "{detail}");
    ensure!(overlapping >= PAIRS / 2, "too few overlapping pairs: {detail}");
    Ok(detail)
}
