//! A tiny model configuration and random inputs for it.

use grounding_core::camera::CameraRig;
use grounding_core::geometry::Box3D;
use grounding_core::textenc::{HashEncoder, TextEmbeddings, TextEncoder};
use grounding_model::bev::{BevConfig, BevGrounding, GridSpec, SceneInput};
use grounding_model::tensor::Tensor;
use grounding_model::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 16x16 cells of 1 m, width 8, two heads, four proposals.
pub fn config() -> BevConfig {
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

pub fn rig() -> CameraRig {
    CameraRig::synthetic(64, 36)
}

pub fn embed<T: Real>(text: &str) -> TextEmbeddings<T> {
    HashEncoder::new(8, 0).unwrap().encode(text).unwrap().cast()
}

/// Random weights everywhere, including the zero-initialised projections.
pub fn model<T: Real>(seed: u64, cameras: bool) -> BevGrounding<T> {
    let rig = rig();
    let mut m = BevGrounding::new(config(), 8, cameras.then_some(&rig), seed).unwrap();
    m.use_images = cameras;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        for v in m.params.get_mut(id).data_mut() {
            *v += T::lit(rng.gen_range(-0.05..0.05));
        }
    }
    m
}

pub fn scene<T: Real>(model: &BevGrounding<T>, seed: u64) -> SceneInput<T> {
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
    let mut scene = model.prepare_scene(&grounding_core::PointCloud::new(pts), None);
    if model.has_camera_branch() {
        let (h, w) = model.image_spec().input_hw(&rig());
        scene.views = Some(
            (0..6)
                .map(|_| Tensor::from_vec(&[3, h, w], (0..3 * h * w).map(|_| T::lit(rng.gen_range(0.0..1.0))).collect()))
                .collect(),
        );
    }
    scene
}

pub fn target(seed: u64) -> Box3D<f64> {
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
