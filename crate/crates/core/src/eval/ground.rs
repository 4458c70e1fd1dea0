use nalgebra::{Matrix3, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::types::{centroid, PointCloud, Vec3};

#[derive(Debug, Clone)]
pub struct GroundResult {
    pub mask: Vec<bool>,
    /// `(a, b, c, d)` with unit normal `(a, b, c)`, `c ≥ 0`, plane `n·x + d = 0`.
    pub plane: [f64; 4],
    pub inlier_fraction: f64,
}

fn plane_through(a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(Vec3, f64)> {
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    if len < 1e-12 {
        return None;
    }
    let n = n / len;
    Some((n, -n.dot(a)))
}

fn inliers(points: &[Vec3], n: &Vec3, d: f64, dist: f64) -> Vec<bool> {
    points.iter().map(|p| (n.dot(p) + d).abs() <= dist).collect()
}

/// RANSAC plane fit: best of `iters` random 3-point hypotheses by inlier
/// count (first found wins ties), refined once by total least squares on its
/// inliers. The returned mask marks points within `inlier_dist` of the
/// refined plane.
pub fn remove_ground_ransac(cloud: &PointCloud, iters: usize, inlier_dist: f64, seed: Seed) -> Result<GroundResult> {
    let pts = &cloud.positions;
    let n = pts.len();
    if n < 3 {
        return Err(Error::TooFewSourcePoints(n));
    }
    let mut rng = seed.rng();
    let mut best: Option<(usize, Vec3, f64)> = None;
    for _ in 0..iters.max(1) {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for lo in [i.min(j), i.max(j)] {
            if k >= lo {
                k += 1;
            }
        }
        let Some((normal, d)) = plane_through(&pts[i], &pts[j], &pts[k]) else {
            continue;
        };
        let count = inliers(pts, &normal, d, inlier_dist).iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, normal, d));
        }
    }
    let (_, mut normal, mut d) = best.unwrap_or((0, Vec3::z(), 0.0));
    let mask = inliers(pts, &normal, d, inlier_dist);
    let chosen: Vec<Vec3> = pts.iter().zip(&mask).filter(|(_, &m)| m).map(|(p, _)| *p).collect();
    if chosen.len() >= 3 {
        let c = centroid(&chosen);
        let mut cov = Matrix3::zeros();
        for p in &chosen {
            let q = p - c;
            cov += q * q.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three eigenvalues");
        let refined: Vec3 = eig.eigenvectors.column(imin).into_owned();
        let refined = refined.normalize();
        // Keep the refinement only if it explains the chosen set at least as well.
        let rd = -refined.dot(&c);
        let count_old = mask.iter().filter(|&&b| b).count();
        let count_new = inliers(pts, &refined, rd, inlier_dist).iter().filter(|&&b| b).count();
        if count_new >= count_old {
            normal = refined;
            d = rd;
        }
    }
    if normal.z < 0.0 {
        normal = -normal;
        d = -d;
    }
    let mask = inliers(pts, &normal, d, inlier_dist);
    let inlier_fraction = mask.iter().filter(|&&b| b).count() as f64 / n as f64;
    Ok(GroundResult {
        mask,
        plane: [normal.x, normal.y, normal.z, d],
        inlier_fraction,
    })
}
