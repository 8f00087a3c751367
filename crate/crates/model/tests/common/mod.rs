#![allow(dead_code)]

use grounding_core::camera::CameraRig;
use grounding_core::geometry::Box3D;
use grounding_core::textenc::{HashEncoder, TextEmbeddings, TextEncoder};
use grounding_model::bev::{BevConfig, BevGrounding, GridSpec, SceneInput};
use grounding_model::tensor::Tensor;
use grounding_model::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// d=8, 16x16 cells of 1 m, K=4, two heads.
pub fn tiny_config() -> BevConfig {
    BevConfig {
        grid: GridSpec {
            lo: -8.0,
            hi: 8.0,
            cell: 1.0,
            z_lo: -2.4,
            z_hi: 2.6,
            nz: 2,
        },
        width: 8,
        heads: 2,
        voxel_channels: 2,
        proposals: 4,
        ..BevConfig::default()
    }
}

pub fn tiny_rig() -> CameraRig {
    CameraRig::synthetic(64, 36)
}

pub fn encoder() -> HashEncoder {
    HashEncoder::new(8, 0).unwrap()
}

pub fn embed<T: Real>(text: &str) -> TextEmbeddings<T> {
    encoder().encode(text).unwrap().cast()
}

pub fn tiny_model<T: Real>(seed: u64, cameras: bool) -> BevGrounding<T> {
    let rig = tiny_rig();
    let mut m = BevGrounding::new(tiny_config(), 8, cameras.then_some(&rig), seed).unwrap();
    m.use_images = cameras;
    m
}

/// Adds noise to every parameter so zero-initialised paths carry gradient.
pub fn jitter<T: Real>(model: &mut BevGrounding<T>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        for v in model.params.get_mut(id).data_mut() {
            *v += T::lit(rng.gen_range(-scale..scale));
        }
    }
}

/// Random points around the tiny grid plus random views for the tiny rig.
pub fn random_scene<T: Real>(model: &BevGrounding<T>, seed: u64) -> SceneInput<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 4]> = (0..400)
        .map(|_| {
            [
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect();
    let frame = grounding_core::PointCloud::new(pts);
    let mut scene = model.prepare_scene(&frame, None);
    if model.has_camera_branch() {
        let (h, w) = model.image_spec().input_hw(&tiny_rig());
        scene.views = Some(
            (0..6)
                .map(|_| {
                    let px = (0..3 * h * w).map(|_| T::lit(rng.gen_range(0.0..1.0))).collect();
                    Tensor::from_vec(&[3, h, w], px)
                })
                .collect(),
        );
    }
    scene
}

pub fn target_box(seed: u64) -> Box3D<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb0c5);
    Box3D::new(
        rng.gen_range(-6.0..6.0),
        rng.gen_range(-6.0..6.0),
        -0.9,
        rng.gen_range(1.0..4.5),
        rng.gen_range(0.6..2.0),
        rng.gen_range(1.0..2.0),
        rng.gen_range(-3.0..3.0),
    )
    .unwrap()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
