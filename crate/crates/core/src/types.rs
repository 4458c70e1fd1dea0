//! Shared domain types.

use nalgebra::{Matrix3, Rotation3, Vector3};
use ndarray::Array2;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Positions in meters plus optional per-point feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub features: Option<Array2<f64>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Self {
        PointCloud {
            positions,
            features: None,
        }
    }

    pub fn with_features(positions: Vec<Vec3>, features: Array2<f64>) -> Self {
        PointCloud {
            positions,
            features: Some(features),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.as_ref().map_or(0, |f| f.ncols())
    }

    pub fn translated(&self, t: &Vec3) -> PointCloud {
        PointCloud {
            positions: self.positions.iter().map(|p| p + t).collect(),
            features: self.features.clone(),
        }
    }

    pub fn transformed(&self, tf: &RigidTransform) -> PointCloud {
        PointCloud {
            positions: self.positions.iter().map(|p| tf.apply(p)).collect(),
            features: self.features.clone(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            features: self
                .features
                .as_ref()
                .map(|f| f.select(ndarray::Axis(0), indices)),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.positions)
    }
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let n = points.len().max(1) as f64;
    points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n
}

/// Checks the invariants every cloud entering a layer must satisfy.
pub fn validate_cloud(cloud: &PointCloud) -> Result<()> {
    if cloud.positions.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if let Some(index) = cloud
        .positions
        .iter()
        .position(|p| !p.iter().all(|c| c.is_finite()))
    {
        return Err(Error::NonFinite { index });
    }
    if let Some(f) = &cloud.features {
        if f.nrows() != cloud.positions.len() {
            return Err(Error::FeatureLengthMismatch {
                points: cloud.positions.len(),
                features: f.nrows(),
            });
        }
    }
    Ok(())
}

/// Per-point motion vectors, meters per frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub vectors: Vec<Vec3>,
}

impl FlowField {
    pub fn new(vectors: Vec<Vec3>) -> Self {
        FlowField { vectors }
    }

    pub fn zeros(n: usize) -> Self {
        FlowField {
            vectors: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn mean_magnitude(&self) -> f64 {
        if self.vectors.is_empty() {
            return 0.0;
        }
        self.vectors.iter().map(|v| v.norm()).sum::<f64>() / self.vectors.len() as f64
    }

    /// `positions + flow`, point-wise.
    pub fn warp(&self, positions: &[Vec3]) -> Vec<Vec3> {
        positions
            .iter()
            .zip(&self.vectors)
            .map(|(p, d)| p + d)
            .collect()
    }
}

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

/// Tolerance on orthonormality of constructed rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn translation(t: Vec3) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Builds a transform, re-orthonormalizing `rotation` when it is within
    /// tolerance and rejecting it otherwise.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > 1e-6 || rotation.determinant() <= 0.0 {
            return Err(Error::DegenerateConfiguration(format!(
                "not a proper rotation (orthonormality error {err:.3e})"
            )));
        }
        Ok(RigidTransform {
            rotation: orthonormalize(&rotation),
            translation,
        })
    }

    /// Rotation by `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vec3, angle: f64, translation: Vec3) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        RigidTransform {
            rotation: Rotation3::from_axis_angle(&axis, angle).into_inner(),
            translation,
        }
    }

    /// Rotation about the point `center` followed by translation `t`:
    /// `x -> R (x - c) + c + t`.
    pub fn about_center(rotation: Matrix3<f64>, center: &Vec3, t: &Vec3) -> Self {
        RigidTransform {
            rotation,
            translation: center - rotation * center + t,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: orthonormalize(&(self.rotation * other.rotation)),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        e.max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self) -> bool {
        self.orthonormality_error() <= ROTATION_TOLERANCE
    }

    /// Angle of the relative rotation between two transforms.
    pub fn rotation_distance(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }
}

/// `atan2(‖axis·sin θ‖, cos θ)` from the skew and trace parts, accurate for
/// angles near zero where `acos` of the trace is not.
fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    s.atan2(c)
}

fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * vt;
    }
    r
}

/// One unit of training/evaluation data.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub frame1: PointCloud,
    pub frame2: PointCloud,
    pub gt_flow: Option<FlowField>,
    /// `true` = supervise this frame-1 point.
    pub mask: Option<Vec<bool>>,
}

impl SceneSample {
    pub fn validate(&self) -> Result<()> {
        validate_cloud(&self.frame1)?;
        validate_cloud(&self.frame2)?;
        let n1 = self.frame1.len();
        if let Some(f) = &self.gt_flow {
            if f.len() != n1 {
                return Err(Error::LengthMismatch(f.len(), n1));
            }
            if f.vectors.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
                return Err(Error::Malformed("non-finite ground-truth flow".into()));
            }
        }
        if let Some(m) = &self.mask {
            if m.len() != n1 {
                return Err(Error::LengthMismatch(m.len(), n1));
            }
        }
        Ok(())
    }
}
