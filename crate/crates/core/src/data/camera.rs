use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PointCloud, Vec3};

pub const DEPTH_CUTOFF: f64 = 35.0;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 1050.0,
            fy: 1050.0,
            cx: 479.5,
            cy: 269.5,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && self.cx.is_finite()
            && self.cy.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::BadIntrinsics(format!("{self:?}")))
        }
    }
}

/// Back-projects every pixel with `0 < Z ≤ z_cutoff`. `depth[(v, u)]` is the
/// Z value at column u, row v; non-finite or non-positive entries count as
/// invalid.
pub fn unproject_depth(depth: ArrayView2<f64>, k: &CameraIntrinsics, z_cutoff: f64) -> Result<PointCloud> {
    k.validate()?;
    let mut pts = Vec::new();
    for ((v, u), &z) in depth.indexed_iter() {
        if z.is_finite() && z > 0.0 && z <= z_cutoff {
            pts.push(unproject_pixel(u as f64, v as f64, z, k));
        }
    }
    Ok(PointCloud::new(pts))
}

/// `X = (u − cx)·Z / fx`, `Y = (v − cy)·Z / fy`.
pub fn unproject_pixel(u: f64, v: f64, z: f64, k: &CameraIntrinsics) -> Vec3 {
    Vec3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z)
}

/// Pixel coordinates `(u, v)` of a camera-frame point.
pub fn project(p: &Vec3, k: &CameraIntrinsics) -> (f64, f64) {
    (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
}
