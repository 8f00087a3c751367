//! Pinhole camera rig surrounding the ego vehicle.

use serde::{Deserialize, Serialize};

use crate::geometry::Box3D;
use crate::labels::Viewpoint;
use crate::scalar::Scalar;

pub const DEFAULT_IMAGE_WIDTH: u32 = 320;
pub const DEFAULT_IMAGE_HEIGHT: u32 = 180;
const DEFAULT_HFOV_DEG: f64 = 70.0;
/// Closest depth a point may have and still project.
const NEAR_PLANE: f64 = 0.1;

/// Ideal pinhole camera mounted at the ego origin, looking horizontally
/// along `heading`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub viewpoint: Viewpoint,
    /// Optical axis azimuth in radians.
    pub heading: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Mount height in the ego frame, meters.
    pub mount_z: f64,
}

/// Image-plane projection of a 3D point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl PinholeCamera {
    pub fn new(viewpoint: Viewpoint, width: u32, height: u32, hfov_deg: f64) -> Self {
        let fx = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self {
            viewpoint,
            heading: viewpoint.heading(),
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            mount_z: 0.0,
        }
    }

    /// Projects an ego-frame point; `None` behind the near plane.
    pub fn project(&self, p: [f64; 3]) -> Option<Pixel> {
        let (s, c) = self.heading.sin_cos();
        let forward = c * p[0] + s * p[1];
        if forward < NEAR_PLANE {
            return None;
        }
        let right = s * p[0] - c * p[1];
        let up = p[2] - self.mount_z;
        Some(Pixel {
            u: self.cx + self.fx * right / forward,
            v: self.cy - self.fy * up / forward,
            depth: forward,
        })
    }

    pub fn contains(&self, px: &Pixel) -> bool {
        px.u >= 0.0 && px.v >= 0.0 && px.u < self.width as f64 && px.v < self.height as f64
    }

    /// Projects all eight box corners; `None` if any is behind the camera.
    pub fn project_box<T: Scalar>(&self, b: &Box3D<T>) -> Option<[Pixel; 8]> {
        let corners = b.cast::<f64>().corners();
        let mut out = [Pixel { u: 0.0, v: 0.0, depth: 0.0 }; 8];
        for (o, c) in out.iter_mut().zip(corners.iter()) {
            *o = self.project(*c)?;
        }
        Some(out)
    }

    /// Whether the whole box projects inside the image rectangle.
    pub fn sees_completely<T: Scalar>(&self, b: &Box3D<T>) -> bool {
        self.project_box(b)
            .map(|px| px.iter().all(|p| self.contains(p)))
            .unwrap_or(false)
    }
}

/// Six cameras ordered like [`Viewpoint::ALL`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<PinholeCamera>,
}

impl CameraRig {
    pub fn synthetic(width: u32, height: u32) -> Self {
        Self {
            cameras: Viewpoint::ALL
                .iter()
                .map(|&v| PinholeCamera::new(v, width, height, DEFAULT_HFOV_DEG))
                .collect(),
        }
    }

    pub fn camera(&self, v: Viewpoint) -> &PinholeCamera {
        &self.cameras[v.index()]
    }
}

impl Default for CameraRig {
    fn default() -> Self {
        Self::synthetic(DEFAULT_IMAGE_WIDTH, DEFAULT_IMAGE_HEIGHT)
    }
}
