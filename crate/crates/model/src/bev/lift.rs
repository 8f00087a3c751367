//! Camera inputs and their lift onto the BEV grid.

use grounding_core::camera::CameraRig;
use grounding_core::{Error, Result};

use crate::Real;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::grid::GridSpec;
use crate::graph::SparseCols;
use crate::tensor::{ConvGeom, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageSpec {
    /// Box-filter factor applied to the rasters before the image branch.
    pub downsample: usize,
    /// Feature channels of the per-view convolutions.
    pub channels: usize,
    /// Heights (ego frame, meters) at which each BEV cell center is
    /// projected into the views.
    pub sample_heights: Vec<f64>,
}

impl Default for ImageSpec {
    fn default() -> Self {
        Self {
            downsample: 4,
            channels: 8,
            sample_heights: vec![-1.4, -0.6],
        }
    }
}

impl ImageSpec {
    /// Input size of one view after downsampling.
    pub fn input_hw(&self, rig: &CameraRig) -> (usize, usize) {
        let cam = &rig.cameras[0];
        (
            (cam.height as usize / self.downsample).max(1),
            (cam.width as usize / self.downsample).max(1),
        )
    }

    /// Size of the per-view feature map (one stride-2 3x3 convolution).
    pub fn feature_hw(&self, rig: &CameraRig) -> (usize, usize) {
        let (h, w) = self.input_hw(rig);
        ConvGeom { cin: 3, h, w, k: 3, stride: 2, pad: 1 }.out_hw()
    }
}

/// Box-filters one raster to `[3, h, w]` with values in [0, 1].
pub fn prepare_view<T: Real>(img: &RgbImage, factor: usize) -> Tensor<T> {
    let f = factor.max(1);
    let (h, w) = ((img.height() as usize / f).max(1), (img.width() as usize / f).max(1));
    let mut out = vec![T::zero(); 3 * h * w];
    let norm = 1.0 / (255.0 * (f * f) as f64);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u32; 3];
            for dy in 0..f {
                for dx in 0..f {
                    let (px, py) = ((x * f + dx) as u32, (y * f + dy) as u32);
                    if px < img.width() && py < img.height() {
                        let p = img.get_pixel(px, py).0;
                        for c in 0..3 {
                            acc[c] += p[c] as u32;
                        }
                    }
                }
            }
            for c in 0..3 {
                out[(c * h + y) * w + x] = T::lit(acc[c] as f64 * norm);
            }
        }
    }
    Tensor::from_vec(&[3, h, w], out)
}

/// Sparse map from the concatenated per-view feature pixels
/// (`views x fh x fw`, view-major) to BEV cells: each cell averages the
/// feature pixels its center projects to at the configured heights.
pub fn build_lift<T: Real>(rig: &CameraRig, grid: &GridSpec, spec: &ImageSpec) -> Result<SparseCols<T>> {
    if rig.cameras.is_empty() {
        return Err(Error::InvalidArgument("camera mode needs a calibrated rig".into()));
    }
    let (fh, fw) = spec.feature_hw(rig);
    let per_view = fh * fw;
    let n = grid.size();
    let mut columns = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let (x, y) = grid.center(col, row);
            let mut hits = Vec::new();
            for (v, cam) in rig.cameras.iter().enumerate() {
                for &z in &spec.sample_heights {
                    let Some(px) = cam.project([x, y, z]) else { continue };
                    if !cam.contains(&px) {
                        continue;
                    }
                    let fu = ((px.u / cam.width as f64) * fw as f64) as usize;
                    let fv = ((px.v / cam.height as f64) * fh as f64) as usize;
                    hits.push(v * per_view + fv.min(fh - 1) * fw + fu.min(fw - 1));
                }
            }
            let w = if hits.is_empty() { 0.0 } else { 1.0 / hits.len() as f64 };
            columns.push(hits.into_iter().map(|i| (i, T::lit(w))).collect::<Vec<_>>());
        }
    }
    Ok(SparseCols::from_columns(rig.cameras.len() * per_view, &columns))
}
