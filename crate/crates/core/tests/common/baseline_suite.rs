//! Geometric baselines measured on synthetic scenes.

use sceneflow::eval::{icp, remove_ground_ransac};
use sceneflow::{RigidTransform, Seed};

use super::scenes::{icp_pair, tilted_ground};

#[derive(Debug, Clone, Copy, Default)]
pub struct IcpReport {
    pub seeds: usize,
    pub max_rotation_err: f64,
    pub max_translation_err: f64,
}

pub fn icp_recovery(seeds: usize) -> IcpReport {
    let mut rep = IcpReport::default();
    for s in 0..seeds as u64 {
        let (f1, f2, truth) = icp_pair(500 + s);
        let r = icp(&f1, &f2, 100, 1e-12).unwrap();
        rep.seeds += 1;
        rep.max_rotation_err = rep.max_rotation_err.max(r.transform.rotation_distance(&truth));
        rep.max_translation_err = rep
            .max_translation_err
            .max((r.transform.translation - truth.translation).norm());
    }
    rep
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GroundReport {
    pub seeds: usize,
    pub max_normal_err_deg: f64,
    pub min_recall: f64,
}

pub fn ground_recovery(seeds: usize) -> GroundReport {
    let mut rep = GroundReport {
        min_recall: 1.0,
        ..GroundReport::default()
    };
    for s in 0..seeds as u64 {
        let scene = tilted_ground(900 + s);
        let r = remove_ground_ransac(&scene.cloud, 200, 0.05, Seed(s)).unwrap();
        let n = sceneflow::Vec3::new(r.plane[0], r.plane[1], r.plane[2]);
        let err = n.dot(&scene.normal).abs().min(1.0).acos().to_degrees();
        let ground = scene.is_ground.iter().filter(|&&g| g).count();
        let hit = scene.is_ground.iter().zip(&r.mask).filter(|(g, m)| **g && **m).count();
        rep.seeds += 1;
        rep.max_normal_err_deg = rep.max_normal_err_deg.max(err);
        rep.min_recall = rep.min_recall.min(hit as f64 / ground as f64);
    }
    rep
}

/// Largest translation error of `register_scans` driven by an oracle that
/// reports the exact translation as flow.
pub fn oracle_translation_error(seeds: usize) -> f64 {
    use sceneflow::apps::register_scans;
    use sceneflow::{FlowField, PointCloud, Result};
    let mut worst: f64 = 0.0;
    for s in 0..seeds as u64 {
        let mut g = super::rng(1200 + s);
        let f1 = super::random_cloud(&mut g, 200, 3.0);
        let t = super::random_points(&mut g, 1, 2.0)[0];
        let f2 = f1.translated(&t);
        let oracle = move |a: &PointCloud, _: &PointCloud, _: Seed| -> Result<(FlowField, Vec<bool>)> {
            Ok((FlowField::new(vec![t; a.len()]), vec![false; a.len()]))
        };
        let r = register_scans(&oracle, &f1, &f2, 1, Seed(s)).unwrap();
        let err = (r.transform.translation - t).norm() + r.transform.rotation_distance(&RigidTransform::identity());
        worst = worst.max(err);
    }
    worst
}
