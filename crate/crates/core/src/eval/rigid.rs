use nalgebra::{Matrix3, SVD};

use crate::error::{Error, Result};
use crate::types::{RigidTransform, Vec3};

/// Weighted least-squares rigid transform mapping `src` onto `dst`
/// (cross-covariance SVD with a determinant guard against reflections).
pub fn rigid_fit(src: &[Vec3], dst: &[Vec3], weights: Option<&[f64]>) -> Result<RigidTransform> {
    if src.len() != dst.len() {
        return Err(Error::LengthMismatch(src.len(), dst.len()));
    }
    if src.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!("{} correspondences", src.len())));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    if let Some(ws) = weights {
        if ws.len() != src.len() {
            return Err(Error::LengthMismatch(ws.len(), src.len()));
        }
        if ws.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::DegenerateConfiguration("weights must be finite and ≥ 0".into()));
        }
    }
    let total: f64 = (0..src.len()).map(w).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateConfiguration("zero total weight".into()));
    }
    let mut cs = Vec3::zeros();
    let mut cd = Vec3::zeros();
    for i in 0..src.len() {
        cs += src[i] * w(i);
        cd += dst[i] * w(i);
    }
    cs /= total;
    cd /= total;
    let mut h = Matrix3::zeros();
    let mut scatter = Matrix3::zeros();
    for i in 0..src.len() {
        let a = src[i] - cs;
        let b = dst[i] - cd;
        h += w(i) * a * b.transpose();
        scatter += w(i) * a * a.transpose();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut ev = [sv[0], sv[1], sv[2]];
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::DegenerateConfiguration("source points are collinear".into()));
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let v = vt.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let t = cd - r * cs;
    RigidTransform::new(r, t)
}

/// Σ w_i ‖T(src_i) − dst_i‖².
pub fn weighted_ssd(tf: &RigidTransform, src: &[Vec3], dst: &[Vec3], weights: Option<&[f64]>) -> f64 {
    src.iter()
        .zip(dst)
        .enumerate()
        .map(|(i, (s, d))| weights.map_or(1.0, |w| w[i]) * (tf.apply(s) - d).norm_squared())
        .sum()
}
