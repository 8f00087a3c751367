//! Desk-scale synthetic driving scenes with template prompts.
//!
//! Every scene is generated from its own ChaCha stream derived from the
//! corpus seed and the scene index, so scenes can be produced in any order
//! (or in parallel) and still come out identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraRig, DEFAULT_IMAGE_HEIGHT, DEFAULT_IMAGE_WIDTH};
use crate::error::{Error, Result};
use crate::geometry::{bev_intersection_area, Box3D, PointCloudFrame};
use crate::labels::{Category, Color, Viewpoint};
use crate::raster;

use super::preprocess::label_attribute;
use super::schema::{write_samples, GroundingSample, SceneObject};

/// Ground plane height in the ego (sensor) frame.
pub const GROUND_Z: f64 = -1.8;

const MAX_REJECTIONS: usize = 100;
const MIN_PLACEMENT_RANGE: f64 = 4.0;
const MAX_PLACEMENT_RANGE: f64 = 48.0;
const SURFACE_INSET: f64 = 0.02;

/// Coarse distance relation to the ego vehicle used in prompts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceBand {
    Near,
    Mid,
    Far,
}

impl DistanceBand {
    pub const ALL: [DistanceBand; 3] = [DistanceBand::Near, DistanceBand::Mid, DistanceBand::Far];

    pub fn of_range(r: f64) -> DistanceBand {
        if r < 15.0 {
            DistanceBand::Near
        } else if r < 30.0 {
            DistanceBand::Mid
        } else {
            DistanceBand::Far
        }
    }

    pub fn phrase(self) -> &'static str {
        match self {
            DistanceBand::Near => "close to us",
            DistanceBand::Mid => "at a moderate distance",
            DistanceBand::Far => "far away",
        }
    }
}

/// Opening sentences naming the viewpoint sector.
pub const VIEWPOINT_OPENERS: [&str; 3] = ["Be aware of the", "Look out for the", "Watch the"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_scenes: usize,
    /// Inclusive bounds on objects per scene, within `[2, 12]`.
    pub objects_per_scene: (usize, usize),
    /// Relative class frequencies, indexed like [`Category::ALL`].
    pub class_priors: [f64; 10],
    /// Upper bound on prompts emitted per scene.
    pub prompts_per_scene: usize,
    pub ground_points: usize,
    pub image_width: u32,
    pub image_height: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenes: 100,
            objects_per_scene: (3, 8),
            class_priors: default_class_priors(),
            prompts_per_scene: 3,
            ground_points: 1500,
            image_width: DEFAULT_IMAGE_WIDTH,
            image_height: DEFAULT_IMAGE_HEIGHT,
        }
    }
}

/// Class mix loosely following a driving dataset: cars dominate.
pub fn default_class_priors() -> [f64; 10] {
    // car, truck, bus, trailer, construction_vehicle, pedestrian,
    // motorcycle, bicycle, traffic_cone, barrier
    [0.40, 0.10, 0.04, 0.03, 0.03, 0.15, 0.05, 0.06, 0.07, 0.07]
}

/// One generated frame.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub scene_id: String,
    pub objects: Vec<SceneObject>,
    pub points: PointCloudFrame<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub rig: CameraRig,
    pub scenes: Vec<SynthScene>,
    pub samples: Vec<GroundingSample>,
    /// Scene ids abandoned after exhausting rejection sampling.
    pub skipped: Vec<String>,
}

pub fn lidar_ref(scene_id: &str) -> String {
    format!("lidar/{scene_id}.bin")
}

pub fn image_refs(scene_id: &str) -> Vec<String> {
    Viewpoint::ALL
        .iter()
        .map(|v| format!("images/{scene_id}_{}.png", v.phrase().replace(' ', "_")))
        .collect()
}

/// Identity of an object as far as the prompt templates can express it.
fn descriptor(o: &SceneObject) -> (Viewpoint, Color, Category, DistanceBand) {
    (
        Viewpoint::from_azimuth(o.bbox.azimuth()),
        o.color.expect("synthetic objects carry a color"),
        o.category,
        DistanceBand::of_range(o.bbox.planar_range()),
    )
}

/// Builds the prompt that names `target` by sector, color, class and distance.
pub fn compose_prompt(target: &SceneObject, opener: &str) -> String {
    let (vp, color, cat, band) = descriptor(target);
    format!("{opener} {}! The {color} {} {}.", vp.phrase(), cat.phrase(), band.phrase())
}

/// Objects whose descriptor no other object in the scene shares.
pub fn uniquely_describable(objects: &[SceneObject]) -> Vec<usize> {
    let mut counts: BTreeMap<_, usize> = BTreeMap::new();
    for o in objects {
        *counts.entry(descriptor(o)).or_default() += 1;
    }
    (0..objects.len()).filter(|&i| counts[&descriptor(&objects[i])] == 1).collect()
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn sample_category(rng: &mut ChaCha8Rng, priors: &[f64; 10]) -> Category {
    let total: f64 = priors.iter().sum();
    let mut t = rng.gen::<f64>() * total;
    for (i, &p) in priors.iter().enumerate() {
        if t < p {
            return Category::ALL[i];
        }
        t -= p;
    }
    Category::ALL[priors.iter().rposition(|&p| p > 0.0).unwrap_or(0)]
}

fn place_objects(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<SceneObject> {
    let (lo, hi) = cfg.objects_per_scene;
    let n = rng.gen_range(lo..=hi);
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    for _ in 0..n {
        let category = sample_category(rng, &cfg.class_priors);
        let color = Color::ALL[rng.gen_range(0..Color::ALL.len())];
        let [ml, mw, mh] = category.mean_size();
        let mut jitter = |m: f64| m * (1.0 + rng.gen_range(-0.08..0.08));
        let (l, w, h) = (jitter(ml), jitter(mw), jitter(mh));
        for _attempt in 0..50 {
            let r = rng.gen_range(MIN_PLACEMENT_RANGE..MAX_PLACEMENT_RANGE);
            let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let bbox = Box3D::new(r * phi.cos(), r * phi.sin(), GROUND_Z + h / 2.0, l, w, h, yaw)
                .expect("positive synthetic extents");
            // Keep a margin between footprints so surface points stay unambiguous.
            let padded = Box3D { l: l + 0.6, w: w + 0.6, ..bbox };
            if objects
                .iter()
                .any(|o| bev_intersection_area(&padded, &Box3D { l: o.bbox.l + 0.6, w: o.bbox.w + 0.6, ..o.bbox }) > 0.0)
            {
                continue;
            }
            objects.push(SceneObject {
                bbox,
                category,
                color: Some(color),
            });
            break;
        }
    }
    objects
}

fn sample_points(rng: &mut ChaCha8Rng, objects: &[SceneObject], ground_points: usize) -> PointCloudFrame<f64> {
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut points = Vec::new();
    for o in objects {
        let b = &o.bbox;
        let (hl, hw, hh) = (b.l / 2.0 - SURFACE_INSET, b.w / 2.0 - SURFACE_INSET, b.h / 2.0 - SURFACE_INSET);
        let faces = [b.w * b.h, b.w * b.h, b.l * b.h, b.l * b.h, b.l * b.w, b.l * b.w];
        let area: f64 = faces.iter().sum();
        let r = b.planar_range().max(5.0);
        let n = ((600.0 * area / (r * r)).round() as usize).clamp(10, 300);
        let reflect = o.color.map_or(0.4, Color::reflectance);
        let (s, c) = b.alpha.sin_cos();
        for _ in 0..n {
            let mut t = rng.gen::<f64>() * area;
            let mut face = 0;
            while face < 5 && t >= faces[face] {
                t -= faces[face];
                face += 1;
            }
            let (a1, a2) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let (u, v, w) = match face {
                0 => (hl, a1 * hw, a2 * hh),
                1 => (-hl, a1 * hw, a2 * hh),
                2 => (a1 * hl, hw, a2 * hh),
                3 => (a1 * hl, -hw, a2 * hh),
                4 => (a1 * hl, a2 * hw, hh),
                _ => (a1 * hl, a2 * hw, -hh),
            };
            // Vehicles carry retroreflectors on the front face.
            let intensity = if face == 0 && o.category.is_vehicle() {
                0.95
            } else {
                (reflect + noise.sample(rng)).clamp(0.0, 1.0)
            };
            points.push([b.x + c * u - s * v, b.y + s * u + c * v, b.z + w, intensity]);
        }
    }
    let radial = Exp::new(1.0 / 15.0).unwrap();
    let ground_noise = Normal::new(0.0, 0.03).unwrap();
    let mut placed = 0;
    let mut tries = 0;
    while placed < ground_points && tries < ground_points * 4 {
        tries += 1;
        let r = 3.0 + radial.sample(rng);
        if r >= 53.0 {
            continue;
        }
        let phi = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let p = [
            r * phi.cos(),
            r * phi.sin(),
            GROUND_Z + ground_noise.sample(rng),
            rng.gen_range(0.05..0.2),
        ];
        let covered = objects.iter().any(|o| {
            let grown = Box3D { l: o.bbox.l + 0.4, w: o.bbox.w + 0.4, h: o.bbox.h + 1.0, ..o.bbox };
            crate::geometry::point_in_box(&p, &grown)
        });
        if !covered {
            points.push(p);
            placed += 1;
        }
    }
    PointCloudFrame::new(points)
}

/// Generates scene `index` of the corpus, or `None` if no object could be
/// described uniquely within the rejection budget.
pub fn synth_scene(cfg: &SynthConfig, index: usize) -> Option<(SynthScene, Vec<usize>, Vec<usize>)> {
    let mut rng = scene_rng(cfg.seed, index);
    let scene_id = format!("scene-{index:05}");
    for _ in 0..MAX_REJECTIONS {
        let objects = place_objects(&mut rng, cfg);
        if objects.len() < 2 {
            continue;
        }
        let mut candidates = uniquely_describable(&objects);
        if candidates.is_empty() {
            continue;
        }
        candidates.shuffle(&mut rng);
        candidates.truncate(cfg.prompts_per_scene.max(1));
        candidates.sort_unstable();
        let openers: Vec<usize> = candidates.iter().map(|_| rng.gen_range(0..VIEWPOINT_OPENERS.len())).collect();
        let points = sample_points(&mut rng, &objects, cfg.ground_points);
        return Some((SynthScene { scene_id, objects, points }, candidates, openers));
    }
    None
}

fn validate_config(cfg: &SynthConfig) -> Result<()> {
    let (lo, hi) = cfg.objects_per_scene;
    if lo < 2 || hi > 12 || lo > hi {
        return Err(Error::InvalidArgument(format!(
            "objects per scene ({lo}, {hi}) must satisfy 2 <= lo <= hi <= 12"
        )));
    }
    if cfg.class_priors.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || cfg.class_priors.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidArgument("class priors must be non-negative with positive sum".into()));
    }
    Ok(())
}

/// Generates the full corpus in memory.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    validate_config(cfg)?;
    let rig = CameraRig::synthetic(cfg.image_width, cfg.image_height);
    let mut corpus = SynthCorpus {
        config: cfg.clone(),
        rig,
        scenes: Vec::with_capacity(cfg.n_scenes),
        samples: Vec::new(),
        skipped: Vec::new(),
    };
    for index in 0..cfg.n_scenes {
        let Some((scene, targets, openers)) = synth_scene(cfg, index) else {
            let id = format!("scene-{index:05}");
            log::warn!("{id}: no uniquely describable object after {MAX_REJECTIONS} attempts, skipping");
            corpus.skipped.push(id);
            continue;
        };
        for (&t, &op) in targets.iter().zip(&openers) {
            let target = &scene.objects[t];
            let attribute = label_attribute(&target.bbox, target.category, &scene.objects)?;
            corpus.samples.push(GroundingSample {
                sample_id: format!("{}-{t:02}", scene.scene_id),
                scene_id: scene.scene_id.clone(),
                prompt: compose_prompt(target, VIEWPOINT_OPENERS[op]),
                lidar_ref: lidar_ref(&scene.scene_id),
                image_refs: image_refs(&scene.scene_id),
                referred: target.bbox,
                category: target.category,
                attribute,
                viewpoint: Viewpoint::from_azimuth(target.bbox.azimuth()),
                scene_boxes: scene.objects.clone(),
            });
        }
        corpus.scenes.push(scene);
    }
    Ok(corpus)
}

const SKY: [u8; 3] = [170, 200, 230];
const ROAD: [u8; 3] = [90, 90, 90];

/// Renders the six schematic camera views of a scene: boxes projected with
/// a pinhole model, filled with their paint color and outlined in their
/// class color, painted far to near.
pub fn render_views(objects: &[SceneObject], rig: &CameraRig) -> Vec<RgbImage> {
    rig.cameras
        .iter()
        .map(|cam| {
            let horizon = cam.cy as u32;
            let mut img = RgbImage::from_fn(cam.width, cam.height, |_, y| Rgb(if y < horizon { SKY } else { ROAD }));
            let mut visible: Vec<(f64, &SceneObject, Vec<[f64; 2]>)> = objects
                .iter()
                .filter_map(|o| {
                    let px = cam.project_box(&o.bbox)?;
                    let depth = px.iter().map(|p| p.depth).sum::<f64>() / 8.0;
                    let pts: Vec<[f64; 2]> = px.iter().map(|p| [p.u, p.v]).collect();
                    Some((depth, o, raster::convex_hull(&pts)))
                })
                .collect();
            visible.sort_by(|a, b| b.0.total_cmp(&a.0));
            for (_, o, hull) in &visible {
                raster::fill_convex(&mut img, hull, o.color.map_or([150, 150, 150], Color::rgb));
                for i in 0..hull.len() {
                    raster::draw_line(&mut img, hull[i], hull[(i + 1) % hull.len()], o.category.outline_rgb());
                }
            }
            img
        })
        .collect()
}

/// Writes `samples.jsonl`, `calib.json`, point clouds and camera rasters
/// under `dir`. Paths inside the samples are relative to `dir`.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> Result<()> {
    for sub in ["lidar", "images"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for scene in &corpus.scenes {
        scene.points.write(&dir.join(lidar_ref(&scene.scene_id)))?;
        let views = render_views(&scene.objects, &corpus.rig);
        for (img, rel) in views.iter().zip(image_refs(&scene.scene_id)) {
            let path = dir.join(rel);
            img.save_with_format(&path, image::ImageFormat::Png)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        }
    }
    let calib = dir.join("calib.json");
    fs::write(&calib, serde_json::to_vec_pretty(&corpus.rig)?).map_err(|e| Error::io(&calib, e))?;
    write_samples(&dir.join("samples.jsonl"), &corpus.samples)
}
