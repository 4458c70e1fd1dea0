//! Exact comparisons of the accelerated operations with the brute-force
//! oracles in the parent module.

use rand::Rng;
use sceneflow::apps::{motion_segment, SegmentConfig};
use sceneflow::eval::{acc, epe, outlier_ratio};
use sceneflow::layers::three_interp;
use sceneflow::spatial::{farthest_point_sample, farthest_point_sample_from, knn, radius_neighbors};
use sceneflow::{FlowField, PointCloud, Seed, Vec3};

use super::*;

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleReport {
    pub instances: usize,
    pub mismatches: usize,
}

impl OracleReport {
    fn record(&mut self, ok: bool) {
        self.instances += 1;
        if !ok {
            self.mismatches += 1;
        }
    }
}

/// Integer lattice points produce exact distance ties.
fn lattice_points(g: &mut impl Rng, n: usize, side: i32) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            Vec3::new(
                g.random_range(-side..=side) as f64,
                g.random_range(-side..=side) as f64,
                g.random_range(-side..=side) as f64,
            ) * 0.25
        })
        .collect()
}

fn instance_points(g: &mut impl Rng, inst: u64, n: usize) -> Vec<Vec3> {
    if inst % 4 == 3 {
        lattice_points(g, n, 4)
    } else {
        let scale = g.random_range(0.2..5.0);
        random_points(g, n, scale)
    }
}

pub fn radius(instances: usize) -> OracleReport {
    let mut rep = OracleReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(10_000 + inst);
        let n = g.random_range(1..300);
        let src = instance_points(&mut g, inst, n);
        let nq = g.random_range(1..60);
        let queries = instance_points(&mut g, inst, nq);
        let r = if inst % 4 == 3 { 0.25 * g.random_range(1..4) as f64 } else { g.random_range(0.0..1.5) };
        let got = radius_neighbors(&src, &queries, r, None, Seed(inst)).unwrap().to_lists();
        let mut ok = got == brute_radius(&src, &queries, r);
        // With a cap, each list is a sorted subset of the full ball of the
        // right size.
        let cap = g.random_range(1..20);
        let capped = radius_neighbors(&src, &queries, r, Some(cap), Seed(inst)).unwrap().to_lists();
        for (c, full) in capped.iter().zip(&got) {
            ok &= c.len() == full.len().min(cap) && c.windows(2).all(|w| w[0] < w[1]) && c.iter().all(|i| full.contains(i));
        }
        rep.record(ok);
    }
    rep
}

pub fn knn_suite(instances: usize) -> OracleReport {
    let mut rep = OracleReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(20_000 + inst);
        let n = g.random_range(1..300);
        let src = instance_points(&mut g, inst, n);
        let nq = g.random_range(1..60);
        let queries = instance_points(&mut g, inst, nq);
        let k = g.random_range(1..=n.min(20));
        rep.record(knn(&src, &queries, k).unwrap() == brute_knn(&src, &queries, k));
    }
    rep
}

pub fn fps(instances: usize) -> OracleReport {
    let mut rep = OracleReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(30_000 + inst);
        let n = g.random_range(1..200);
        let pts = instance_points(&mut g, inst, n);
        let m = g.random_range(1..=n);
        let got = farthest_point_sample(&pts, m, Seed(inst)).unwrap();
        let first = got[0];
        let from = g.random_range(0..n);
        rep.record(got == brute_fps(&pts, m, first) && farthest_point_sample_from(&pts, m, from) == brute_fps(&pts, m, from));
    }
    rep
}

pub fn interp(instances: usize) -> OracleReport {
    let mut rep = OracleReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(40_000 + inst);
        let n = g.random_range(3..150);
        let src = random_points(&mut g, n, 2.0);
        let c = g.random_range(1..6);
        let feats = random_matrix(&mut g, n, c);
        let nt = g.random_range(1..50);
        let mut targets = random_points(&mut g, nt, 2.0);
        // A target sitting on a source point exercises the distance floor.
        targets.push(src[0]);
        let cloud = PointCloud::with_features(src.clone(), feats.clone());
        let (out, _) = three_interp(&cloud, &targets).unwrap();
        rep.record(out == brute_interp(&src, &feats, &targets));
    }
    rep
}

fn brute_metrics(pred: &[Vec3], gt: &[Vec3], mask: &[bool]) -> (f64, f64, f64, f64) {
    let mut sum = 0.0;
    let (mut strict, mut relaxed, mut out, mut n) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..pred.len() {
        if !mask[i] {
            continue;
        }
        let e = d2(&pred[i], &gt[i]).sqrt();
        let m = d2(&gt[i], &Vec3::zeros()).sqrt().max(1e-10);
        sum += e;
        n += 1;
        strict += (e < 0.05 || e / m < 0.05) as usize;
        relaxed += (e < 0.1 || e / m < 0.1) as usize;
        out += (e > 0.3 && e / m > 0.05) as usize;
    }
    let n = n as f64;
    (sum / n, strict as f64 / n, relaxed as f64 / n, out as f64 / n)
}

pub fn metrics(instances: usize) -> OracleReport {
    let mut rep = OracleReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(50_000 + inst);
        let n = g.random_range(1..400);
        let scale = g.random_range(0.05..2.0);
        let gt = random_points(&mut g, n, scale);
        let noise = g.random_range(0.0..0.6);
        let pred: Vec<Vec3> = gt.iter().map(|v| v + random_points(&mut g, 1, noise)[0]).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| g.random_bool(0.8)).collect();
        mask[0] = true;
        let (p, t) = (FlowField::new(pred.clone()), FlowField::new(gt.clone()));
        let m = Some(mask.as_slice());
        let got = (
            epe(&p, &t, m).unwrap(),
            acc(&p, &t, m, 0.05, 0.05).unwrap(),
            acc(&p, &t, m, 0.1, 0.1).unwrap(),
            outlier_ratio(&p, &t, m).unwrap(),
        );
        let want = brute_metrics(&pred, &gt, &mask);
        rep.record(got == want);
    }
    rep
}

/// Canonical ids from oracle roots: clusters numbered by lowest member,
/// small clusters mapped to -1.
pub fn brute_segment_ids(roots: &[usize], min_size: usize) -> Vec<i64> {
    let n = roots.len();
    let mut first: Vec<Option<usize>> = vec![None; n];
    let mut size = vec![0usize; n];
    for (i, &r) in roots.iter().enumerate() {
        size[r] += 1;
        first[r].get_or_insert(i);
    }
    let mut order: Vec<usize> = (0..n).filter(|&r| size[r] >= min_size.max(1)).collect();
    order.sort_by_key(|&r| first[r]);
    let mut id = vec![-1i64; n];
    for (k, &r) in order.iter().enumerate() {
        id[r] = k as i64;
    }
    roots.iter().map(|&r| id[r]).collect()
}

pub fn segment(instances: usize) -> OracleReport {
    let mut rep = OracleReport::default();
    for inst in 0..instances as u64 {
        let mut g = rng(60_000 + inst);
        let n = g.random_range(1..250);
        let (ps, fs) = (g.random_range(0.5..3.0), g.random_range(0.0..1.0));
        let pts = random_points(&mut g, n, ps);
        let flow = random_points(&mut g, n, fs);
        let cfg = SegmentConfig {
            lambda: g.random_range(0.0..5.0),
            eps: g.random_range(0.1..0.8),
            min_cluster_size: g.random_range(1..10),
        };
        let six: Vec<[f64; 6]> = pts
            .iter()
            .zip(&flow)
            .map(|(p, d)| [p.x, p.y, p.z, cfg.lambda * d.x, cfg.lambda * d.y, cfg.lambda * d.z])
            .collect();
        let want = brute_segment_ids(&brute_components(&six, cfg.eps), cfg.min_cluster_size);
        let got = motion_segment(&PointCloud::new(pts), &FlowField::new(flow), &cfg).unwrap();
        let count = want.iter().copied().max().map_or(0, |m| (m + 1) as usize);
        rep.record(got.ids == want && got.count == count);
    }
    rep
}
