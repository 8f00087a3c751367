//! Ground-plane grid: voxel inputs, box encodings, heatmap targets,
//! positional encodings and peak selection. Everything here is
//! parameter-free.

use grounding_core::geometry::{normalize_angle, Box3D, PointCloudFrame};
use grounding_core::{Error, Result};

use crate::Real;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Per-voxel input features: occupancy, log count, mean offsets from the
/// voxel center (x, y, z, each scaled to [-1, 1]), mean intensity and
/// mean squared intensity.
pub const VOXEL_FEATURES: usize = 7;

/// Width of the encoded regression target.
pub const BOX_CODE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    /// Meters per cell.
    pub cell: f64,
    pub z_lo: f64,
    pub z_hi: f64,
    /// Vertical voxel slices.
    pub nz: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: -54.0,
            hi: 54.0,
            cell: 0.6,
            z_lo: -2.4,
            z_hi: 2.6,
            nz: 5,
        }
    }
}

impl GridSpec {
    pub fn size(&self) -> usize {
        ((self.hi - self.lo) / self.cell - 1e-9).ceil() as usize
    }

    pub fn cells(&self) -> usize {
        self.size() * self.size()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.hi > self.lo && self.cell > 0.0 && self.z_hi > self.z_lo && self.nz > 0;
        if !ok || self.size() < 4 {
            return Err(Error::InvalidArgument(format!("degenerate grid {self:?}")));
        }
        Ok(())
    }

    /// `(column, row)` of the cell containing `(x, y)`, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.lo) / self.cell).floor();
        let fy = ((y - self.lo) / self.cell).floor();
        let n = self.size() as f64;
        (fx >= 0.0 && fy >= 0.0 && fx < n && fy < n).then_some((fx as usize, fy as usize))
    }

    /// Row-major flat index.
    pub fn flat(&self, col: usize, row: usize) -> usize {
        row * self.size() + col
    }

    pub fn unflat(&self, i: usize) -> (usize, usize) {
        (i % self.size(), i / self.size())
    }

    pub fn center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.lo + (col as f64 + 0.5) * self.cell,
            self.lo + (row as f64 + 0.5) * self.cell,
        )
    }
}

/// A `C x H x W` map over the ground plane.
#[derive(Clone, Debug, PartialEq)]
pub struct BevGrid<T> {
    pub data: Tensor<T>,
    pub lo: f64,
    pub hi: f64,
    pub cell: f64,
}

impl<T: Real> BevGrid<T> {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_zero(&self) -> bool {
        self.data.data().iter().all(|v| *v == T::zero())
    }
}

/// Voxelizes a frame into `[VOXEL_FEATURES, nz * H * W]`, slice-major so
/// a reshape gives `[.., nz, H, W]`. Points outside the grid are dropped.
pub fn voxelize<T: Real>(frame: &PointCloudFrame<f64>, spec: &GridSpec) -> Tensor<T> {
    let n = spec.size();
    let hw = n * n;
    let cells = spec.nz * hw;
    let dz = (spec.z_hi - spec.z_lo) / spec.nz as f64;
    let mut count = vec![0u32; cells];
    let mut sums = vec![[0.0f64; 5]; cells];
    for p in &frame.points {
        let Some((col, row)) = spec.cell_of(p[0], p[1]) else { continue };
        let fz = ((p[2] - spec.z_lo) / dz).floor();
        if fz < 0.0 || fz >= spec.nz as f64 {
            continue;
        }
        let k = fz as usize;
        let (cx, cy) = spec.center(col, row);
        let cz = spec.z_lo + (k as f64 + 0.5) * dz;
        let v = k * hw + spec.flat(col, row);
        count[v] += 1;
        let s = &mut sums[v];
        s[0] += (p[0] - cx) / (spec.cell / 2.0);
        s[1] += (p[1] - cy) / (spec.cell / 2.0);
        s[2] += (p[2] - cz) / (dz / 2.0);
        s[3] += p[3];
        s[4] += p[3] * p[3];
    }
    let mut out = vec![T::zero(); VOXEL_FEATURES * cells];
    for v in 0..cells {
        let c = count[v];
        if c == 0 {
            continue;
        }
        let cf = c as f64;
        let feats = [
            1.0,
            (1.0 + cf).ln() / 3.0,
            sums[v][0] / cf,
            sums[v][1] / cf,
            sums[v][2] / cf,
            sums[v][3] / cf,
            sums[v][4] / cf,
        ];
        for (f, val) in feats.iter().enumerate() {
            out[f * cells + v] = T::lit(*val);
        }
    }
    Tensor::from_vec(&[VOXEL_FEATURES, cells], out)
}

/// Constant coordinate channels `[x, y, r, cos phi, sin phi]` (metric
/// values scaled by the grid half-extent).
pub fn coordinate_channels<T: Real>(spec: &GridSpec) -> Tensor<T> {
    let n = spec.size();
    let half = (spec.hi - spec.lo) / 2.0;
    let mut out = vec![T::zero(); 5 * n * n];
    for row in 0..n {
        for col in 0..n {
            let (x, y) = spec.center(col, row);
            let r = x.hypot(y);
            let phi = y.atan2(x);
            let i = spec.flat(col, row);
            let vals = [x / half, y / half, r / half, phi.cos(), phi.sin()];
            for (c, v) in vals.iter().enumerate() {
                out[c * n * n + i] = T::lit(*v);
            }
        }
    }
    Tensor::from_vec(&[5, n, n], out)
}

/// 2D sinusoidal encoding of cell `(col, row)` into `d` values (`d`
/// divisible by 4). Wavelengths run from 2 cells to twice the grid size.
pub fn positional_encoding(col: usize, row: usize, d: usize, size: usize) -> Vec<f64> {
    let q = d / 4;
    let mut out = Vec::with_capacity(d);
    for pos in [col as f64, row as f64] {
        for k in 0..q {
            let w = std::f64::consts::PI * (1.0 / size as f64).powf(k as f64 / q.max(1) as f64);
            out.push((w * pos).sin());
            out.push((w * pos).cos());
        }
    }
    out
}

/// Encodings of the given cells as a `[cells.len(), d]` tensor.
pub fn positional_rows<T: Real>(cells: &[usize], d: usize, spec: &GridSpec) -> Tensor<T> {
    let mut data = Vec::with_capacity(cells.len() * d);
    for &i in cells {
        let (c, r) = spec.unflat(i);
        data.extend(positional_encoding(c, r, d, spec.size()).into_iter().map(T::lit));
    }
    Tensor::from_vec(&[cells.len(), d], data)
}

/// Regression code of `b` relative to cell `(col, row)`:
/// `[dx, dy (cells), z, ln l, ln w, ln h, sin a, cos a]`.
pub fn encode_box(b: &Box3D<f64>, col: usize, row: usize, spec: &GridSpec) -> [f64; BOX_CODE] {
    let (s, c) = b.alpha.sin_cos();
    [
        (b.x - spec.lo) / spec.cell - (col as f64 + 0.5),
        (b.y - spec.lo) / spec.cell - (row as f64 + 0.5),
        b.z,
        b.l.ln(),
        b.w.ln(),
        b.h.ln(),
        s,
        c,
    ]
}

/// Limit on decoded log-dimensions so untrained heads still give valid boxes.
const LOG_DIM_CLAMP: f64 = 5.0;

/// Inverse of [`encode_box`]; the rotation pair is renormalized through
/// `atan2`.
pub fn decode_box(code: &[f64], col: usize, row: usize, spec: &GridSpec) -> Box3D<f64> {
    let dim = |v: f64| v.clamp(-LOG_DIM_CLAMP, LOG_DIM_CLAMP).exp();
    let alpha = if code[6] == 0.0 && code[7] == 0.0 {
        0.0
    } else {
        normalize_angle(code[6].atan2(code[7]))
    };
    Box3D {
        x: (col as f64 + 0.5 + code[0]) * spec.cell + spec.lo,
        y: (row as f64 + 0.5 + code[1]) * spec.cell + spec.lo,
        z: code[2],
        l: dim(code[3]),
        w: dim(code[4]),
        h: dim(code[5]),
        alpha,
    }
}

/// Gaussian splat over cells with peak exactly 1 at the center's cell.
/// The spread follows the box footprint, never below half a cell.
pub fn heatmap_target<T: Real>(b: &Box3D<f64>, spec: &GridSpec) -> Vec<T> {
    let n = spec.size();
    let mut out = vec![T::zero(); n * n];
    let Some((c0, r0)) = spec.cell_of(b.x, b.y) else { return out };
    let sigma = ((b.l + b.w) / (6.0 * spec.cell)).max(0.5);
    let reach = (3.0 * sigma).ceil() as isize;
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let (c, r) = (c0 as isize + dc, r0 as isize + dr);
            if c < 0 || r < 0 || c >= n as isize || r >= n as isize {
                continue;
            }
            let d2 = (dc * dc + dr * dr) as f64;
            let v = (-d2 / (2.0 * sigma * sigma)).exp();
            if v > 1e-4 {
                out[spec.flat(c as usize, r as usize)] = T::lit(v);
            }
        }
    }
    out
}

/// Top-`k` cells of a heatmap after 3x3 local-maximum suppression. A cell
/// survives if no neighbour is strictly larger; ties go to the lower
/// row-major index. If fewer than `k` cells survive, the remainder is
/// filled from the suppressed cells by the same order.
pub fn select_peaks<T: Real>(heat: &[T], size: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > heat.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot select {k} proposals from {} cells",
            heat.len()
        )));
    }
    let mut peaks = Vec::new();
    let mut rest = Vec::new();
    for row in 0..size {
        for col in 0..size {
            let i = row * size + col;
            let v = heat[i];
            let mut is_max = true;
            'nb: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (r, c) = (row as isize + dr, col as isize + dc);
                    if (dr, dc) == (0, 0) || r < 0 || c < 0 || r >= size as isize || c >= size as isize {
                        continue;
                    }
                    if heat[r as usize * size + c as usize] > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push(i);
            } else {
                rest.push(i);
            }
        }
    }
    let by_score = |a: &usize, b: &usize| heat[*b].partial_cmp(&heat[*a]).unwrap().then(a.cmp(b));
    peaks.sort_by(by_score);
    if peaks.len() < k {
        rest.sort_by(by_score);
        peaks.extend(rest);
    }
    peaks.truncate(k);
    Ok(peaks)
}
