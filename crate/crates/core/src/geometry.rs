//! Oriented box geometry: BEV footprints, rotated IoU, point containment.
//!
//! Boxes live in the ego frame (x forward, y left, z up). Yaw is measured
//! counterclockwise from +x about the vertical axis.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance applied to point containment tests.
pub const CONTAINMENT_TOL: f64 = 1e-9;

/// Lower corner of the detection range (exclusive).
pub const RANGE_LO: [f64; 3] = [-54.0, -54.0, -5.0];
/// Upper corner of the detection range (exclusive).
pub const RANGE_HI: [f64; 3] = [54.0, 54.0, 3.0];

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = (a + T::PI()) % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    let out = r - T::PI();
    // `%` can land exactly on +pi after rounding.
    if out >= T::PI() {
        out - two_pi
    } else {
        out
    }
}

/// Oriented 3D bounding box `(x, y, z, l, w, h, alpha)`.
///
/// `l` runs along the heading, `w` laterally and `h` vertically. The yaw is
/// kept normalized to `[-pi, pi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "BoxFields<T>",
    bound(
        serialize = "T: Scalar + Serialize",
        deserialize = "T: Scalar + Deserialize<'de>"
    )
)]
pub struct Box3D<T: Scalar> {
    pub x: T,
    pub y: T,
    pub z: T,
    pub l: T,
    pub w: T,
    pub h: T,
    pub alpha: T,
}

#[derive(Deserialize)]
struct BoxFields<T> {
    x: T,
    y: T,
    z: T,
    l: T,
    w: T,
    h: T,
    alpha: T,
}

impl<T: Scalar> TryFrom<BoxFields<T>> for Box3D<T> {
    type Error = Error;

    fn try_from(f: BoxFields<T>) -> Result<Self> {
        Box3D::new(f.x, f.y, f.z, f.l, f.w, f.h, f.alpha)
    }
}

impl<T: Scalar> Box3D<T> {
    /// Builds a box, rejecting non-positive or non-finite extents.
    pub fn new(x: T, y: T, z: T, l: T, w: T, h: T, alpha: T) -> Result<Self> {
        for (name, v) in [("x", x), ("y", y), ("z", z), ("alpha", alpha)] {
            if !v.is_finite() {
                return Err(Error::InvalidBox(format!("{name} is not finite")));
            }
        }
        for (name, v) in [("l", l), ("w", w), ("h", h)] {
            if !(v.is_finite() && v > T::zero()) {
                return Err(Error::InvalidBox(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(Self {
            x,
            y,
            z,
            l,
            w,
            h,
            alpha: normalize_angle(alpha),
        })
    }

    pub fn center(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn volume(&self) -> T {
        self.l * self.w * self.h
    }

    pub fn bev_area(&self) -> T {
        self.l * self.w
    }

    /// Planar distance of the center from the ego origin.
    pub fn planar_range(&self) -> T {
        self.x.hypot(self.y)
    }

    /// Azimuth of the center in the ego frame, `atan2(y, x)`.
    pub fn azimuth(&self) -> T {
        self.y.atan2(self.x)
    }

    /// Vertical interval `[z - h/2, z + h/2]`.
    pub fn z_interval(&self) -> (T, T) {
        let half = self.h / T::lit(2.0);
        (self.z - half, self.z + half)
    }

    /// The eight corners: bottom face first (same order as [`bev_corners`]),
    /// then the top face.
    pub fn corners(&self) -> [[T; 3]; 8] {
        let bev = bev_corners(self);
        let (z0, z1) = self.z_interval();
        let mut out = [[T::zero(); 3]; 8];
        for (i, c) in bev.iter().enumerate() {
            out[i] = [c[0], c[1], z0];
            out[i + 4] = [c[0], c[1], z1];
        }
        out
    }

    /// Applies a planar rigid motion: rotate by `dtheta` about the origin,
    /// then translate by `(dx, dy)`.
    pub fn rigid_transform(&self, dx: T, dy: T, dtheta: T) -> Self {
        let (s, c) = dtheta.sin_cos();
        Self {
            x: c * self.x - s * self.y + dx,
            y: s * self.x + c * self.y + dy,
            alpha: normalize_angle(self.alpha + dtheta),
            ..*self
        }
    }

    pub fn cast<U: Scalar>(&self) -> Box3D<U> {
        let f = |v: T| U::lit(v.to_f64_lossy());
        Box3D {
            x: f(self.x),
            y: f(self.y),
            z: f(self.z),
            l: f(self.l),
            w: f(self.w),
            h: f(self.h),
            alpha: f(self.alpha),
        }
    }
}

/// Point set `(x, y, z, intensity)` of one LiDAR sweep.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloudFrame<T: Scalar> {
    pub points: Vec<[T; 4]>,
}

impl<T: Scalar> PointCloudFrame<T> {
    pub fn new(points: Vec<[T; 4]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Serializes as headerless little-endian `f32` quadruplets.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for p in &self.points {
            for v in p {
                out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parses headerless little-endian `f32` records of `stride` floats,
    /// keeping the first four fields of each (stride 5 reads nuScenes sweeps).
    pub fn from_bytes(bytes: &[u8], stride: usize) -> Result<Self> {
        if stride < 4 {
            return Err(Error::Format(format!("point stride {stride} < 4")));
        }
        let rec = stride * 4;
        if bytes.len() % rec != 0 {
            return Err(Error::Format(format!(
                "point buffer of {} bytes is not a multiple of {rec}",
                bytes.len()
            )));
        }
        let points = bytes
            .chunks_exact(rec)
            .map(|chunk| {
                let mut p = [T::zero(); 4];
                for (k, v) in p.iter_mut().enumerate() {
                    let b = [chunk[4 * k], chunk[4 * k + 1], chunk[4 * k + 2], chunk[4 * k + 3]];
                    *v = T::lit(f32::from_le_bytes(b) as f64);
                }
                p
            })
            .collect::<Vec<_>>();
        if points.iter().any(|p| !p[3].is_finite()) {
            return Err(Error::Format("non-finite intensity".into()));
        }
        Ok(Self { points })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_with_stride(path, 4)
    }

    /// Import adapter for 5-float nuScenes records (the ring index is dropped).
    pub fn read_nuscenes(path: &Path) -> Result<Self> {
        Self::read_with_stride(path, 5)
    }

    fn read_with_stride(path: &Path, stride: usize) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf, stride)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .and_then(|_| f.flush())
            .map_err(|e: io::Error| Error::io(path, e))
    }
}

/// Corners of the yaw-rotated `l x w` footprint, counterclockwise, starting
/// at the front-left corner.
pub fn bev_corners<T: Scalar>(b: &Box3D<T>) -> [[T; 2]; 4] {
    let half = T::lit(0.5);
    let (hl, hw) = (b.l * half, b.w * half);
    let (s, c) = b.alpha.sin_cos();
    let offsets = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    offsets.map(|(u, v)| [b.x + c * u - s * v, b.y + s * u + c * v])
}

/// Signed area by the shoelace formula (positive for CCW polygons).
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let p = poly[i];
        let q = poly[(i + 1) % poly.len()];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    acc * T::lit(0.5)
}

#[inline]
fn cross<T: Scalar>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn line_intersection<T: Scalar>(p: [T; 2], q: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom == T::zero() {
        return q;
    }
    let t = dp / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Clips `subject` against the convex CCW polygon `clip` (Sutherland–Hodgman).
pub fn clip_convex<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut output: Vec<[T; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= T::zero();
            let prev_in = cross(a, b, prev) >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

/// Area of the intersection of two BEV footprints.
pub fn bev_intersection_area<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    // Cheap reject on circumscribed circles.
    let half = T::lit(0.5);
    let ra = a.l.hypot(a.w) * half;
    let rb = b.l.hypot(b.w) * half;
    if (a.x - b.x).hypot(a.y - b.y) > ra + rb {
        return T::zero();
    }
    let inter = clip_convex(&bev_corners(a), &bev_corners(b));
    polygon_area(&inter).max(T::zero())
}

/// Yaw-aware IoU of the two footprints.
pub fn bev_iou<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let inter = bev_intersection_area(a, b);
    let union = a.bev_area() + b.bev_area() - inter;
    if inter <= T::zero() || union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one()).max(T::zero())
}

/// Length of the overlap of the two vertical extents.
pub fn vertical_overlap<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let (a0, a1) = a.z_interval();
    let (b0, b1) = b.z_interval();
    (a1.min(b1) - a0.max(b0)).max(T::zero())
}

/// Volumetric IoU of two yaw-rotated boxes.
pub fn iou_3d<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let dz = vertical_overlap(a, b);
    if dz <= T::zero() {
        return T::zero();
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if inter <= T::zero() || union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one()).max(T::zero())
}

/// Whether a point lies inside the box, boundary included.
pub fn point_in_box<T: Scalar>(p: &[T; 4], b: &Box3D<T>) -> bool {
    let tol = T::lit(CONTAINMENT_TOL);
    let half = T::lit(0.5);
    let (s, c) = b.alpha.sin_cos();
    let dx = p[0] - b.x;
    let dy = p[1] - b.y;
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.l * half + tol && v.abs() <= b.w * half + tol && (p[2] - b.z).abs() <= b.h * half + tol
}

/// Number of frame points inside the box.
pub fn points_in_box<T: Scalar>(frame: &PointCloudFrame<T>, b: &Box3D<T>) -> usize {
    frame.points.iter().filter(|p| point_in_box(p, b)).count()
}

/// Strict range test on the box center: `lo < (x, y, z) < hi`.
pub fn in_range<T: Scalar>(b: &Box3D<T>, lo: [T; 3], hi: [T; 3]) -> bool {
    b.center()
        .iter()
        .zip(lo.iter().zip(hi.iter()))
        .all(|(&c, (&l, &h))| l < c && c < h)
}
