//! Bird's-eye PNGs: lidar points, scene boxes, ground truth in red, baseline
//! predictions in blue and BEV grounding predictions in green.

use std::collections::HashMap;
use std::path::Path;

use grounding_core::datakit::{read_jsonl, read_samples};
use grounding_core::evalkit::PredictionRecord;
use grounding_core::geometry::{bev_corners, Box3D};
use grounding_core::raster::{draw_line, fill_convex};
use grounding_core::{Error, PointCloud};
use image::{Rgb, RgbImage};
use log::warn;

use crate::{Ctx, VizArgs};

const BACKGROUND: [u8; 3] = [250, 250, 250];
const POINT: [u8; 3] = [150, 150, 150];
const SCENE_BOX: [u8; 3] = [190, 190, 190];
const EGO: [u8; 3] = [40, 40, 40];
pub const GT: [u8; 3] = [220, 30, 30];
pub const BASELINE: [u8; 3] = [30, 60, 220];
pub const MODEL: [u8; 3] = [20, 160, 60];

/// Ego x points up the image, ego y points left.
struct View {
    size: u32,
    extent: f64,
}

impl View {
    fn px(&self, x: f64, y: f64) -> [f64; 2] {
        let s = self.size as f64 / (2.0 * self.extent);
        [(self.extent - y) * s, (self.extent - x) * s]
    }

    fn outline(&self, img: &mut RgbImage, b: &Box3D<f64>, rgb: [u8; 3], thick: bool) {
        let c = bev_corners(b).map(|p| self.px(p[0], p[1]));
        let offsets: &[[f64; 2]] = if thick {
            &[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]
        } else {
            &[[0.0, 0.0]]
        };
        for o in offsets {
            for i in 0..4 {
                let (a, b) = (c[i], c[(i + 1) % 4]);
                draw_line(img, [a[0] + o[0], a[1] + o[1]], [b[0] + o[0], b[1] + o[1]], rgb);
            }
        }
        // Heading tick from the center to the front edge.
        let mid = |p: [f64; 2], q: [f64; 2]| [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
        draw_line(img, self.px(b.x, b.y), mid(c[0], c[1]), rgb);
    }
}

/// Keeps file names portable.
fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn load_preds(ctx: &Ctx, p: Option<&Path>) -> anyhow::Result<HashMap<String, Box3D<f64>>> {
    let Some(p) = p else { return Ok(HashMap::new()) };
    let recs: Vec<PredictionRecord> = read_jsonl(&ctx.path(p))?;
    Ok(recs.into_iter().map(|r| (r.sample_id, r.bbox)).collect())
}

pub fn viz(ctx: &Ctx, a: VizArgs) -> anyhow::Result<()> {
    let samples_path = ctx.path(&a.samples);
    let samples = read_samples(&samples_path)?;
    let root = samples_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let baseline = load_preds(ctx, a.baseline.as_deref())?;
    let model = load_preds(ctx, a.pred.as_deref())?;
    let sec = &ctx.run.viz;
    if sec.size == 0 || !(sec.extent > 0.0) {
        anyhow::bail!(crate::UsageError("viz size and extent must be positive".into()));
    }
    let view = View {
        size: sec.size,
        extent: sec.extent,
    };
    let dir = ctx.path(&a.out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let limit = a.limit.unwrap_or(sec.limit);
    let mut written = 0;
    for s in samples.iter().take(limit) {
        let mut img = RgbImage::from_pixel(view.size, view.size, Rgb(BACKGROUND));
        match PointCloud::read(&root.join(&s.lidar_ref)) {
            Ok(frame) => {
                for p in &frame.points {
                    let [u, v] = view.px(p[0], p[1]);
                    if u >= 0.0 && v >= 0.0 && (u as u32) < view.size && (v as u32) < view.size {
                        img.put_pixel(u as u32, v as u32, Rgb(POINT));
                    }
                }
            }
            Err(e) => warn!("{}: no points drawn ({e})", s.sample_id),
        }
        let ego = [view.px(0.6, 0.0), view.px(-0.6, 0.4), view.px(-0.6, -0.4)];
        fill_convex(&mut img, &ego, EGO);
        for o in &s.scene_boxes {
            view.outline(&mut img, &o.bbox, SCENE_BOX, false);
        }
        view.outline(&mut img, &s.referred, GT, true);
        if let Some(b) = baseline.get(&s.sample_id) {
            view.outline(&mut img, b, BASELINE, true);
        }
        if let Some(b) = model.get(&s.sample_id) {
            view.outline(&mut img, b, MODEL, true);
        }
        let path = dir.join(format!("{}.png", file_stem(&s.sample_id)));
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        written += 1;
    }
    say!("{written} images -> {}", dir.display());
    Ok(())
}
