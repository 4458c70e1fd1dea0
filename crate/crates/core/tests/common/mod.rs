//! Oracles shared by the integration and acceptance tests. Nothing here
//! calls into the accelerated code paths it is used to check.
#![allow(dead_code)]

pub mod baseline_suite;
pub mod grad_suite;
pub mod invariance_suite;
pub mod oracle_suite;
pub mod scenes;

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sceneflow::{PointCloud, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * scale
        })
        .collect()
}

pub fn random_cloud(rng: &mut impl Rng, n: usize, scale: f64) -> PointCloud {
    PointCloud::new(random_points(rng, n, scale))
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

// ------------------------------------------------------------ brute force

pub fn d2(a: &Vec3, b: &Vec3) -> f64 {
    let d = a - b;
    d.x * d.x + d.y * d.y + d.z * d.z
}

pub fn brute_radius(source: &[Vec3], queries: &[Vec3], r: f64) -> Vec<Vec<usize>> {
    queries
        .iter()
        .map(|q| (0..source.len()).filter(|&i| d2(&source[i], q) <= r * r).collect())
        .collect()
}

pub fn brute_knn(source: &[Vec3], queries: &[Vec3], k: usize) -> Vec<Vec<usize>> {
    queries
        .iter()
        .map(|q| {
            let mut idx: Vec<usize> = (0..source.len()).collect();
            idx.sort_by(|&a, &b| {
                d2(&source[a], q)
                    .partial_cmp(&d2(&source[b], q))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            idx.truncate(k);
            idx
        })
        .collect()
}

/// Greedy max-min selection recomputing every min-distance from scratch.
pub fn brute_fps(points: &[Vec3], m: usize, first: usize) -> Vec<usize> {
    let mut chosen = vec![first];
    while chosen.len() < m {
        let mut best = None;
        let mut best_d = -1.0;
        for i in 0..points.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| d2(&points[i], &points[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

/// Plain formula for inverse-distance interpolation from three neighbors.
pub fn brute_interp(src: &[Vec3], feats: &ndarray::Array2<f64>, targets: &[Vec3]) -> ndarray::Array2<f64> {
    let nn = brute_knn(src, targets, 3);
    let mut out = ndarray::Array2::zeros((targets.len(), feats.ncols()));
    for (j, t) in targets.iter().enumerate() {
        let w: Vec<f64> = nn[j]
            .iter()
            .map(|&i| 1.0 / d2(&src[i], t).sqrt().max(1e-10))
            .collect();
        let s: f64 = w.iter().sum();
        for c in 0..feats.ncols() {
            out[(j, c)] = nn[j].iter().zip(&w).map(|(&i, wi)| wi / s * feats[(i, c)]).sum();
        }
    }
    out
}

/// Connected components by union-find over all pairs.
pub fn brute_components(points: &[[f64; 6]], eps: f64) -> Vec<usize> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = (0..6).map(|k| (points[i][k] - points[j][k]).powi(2)).sum();
            if d <= eps * eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

// -------------------------------------------------------- finite differences

pub const FD_EPS: f64 = 1e-5;

/// Entries whose magnitude is below this are compared absolutely: a central
/// difference at ε = 1e-5 cannot resolve them better than round-off of the
/// objective divided by ε (typically 1e-9 for O(10) objectives).
pub const FD_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FdReport {
    pub checked: usize,
    pub excluded: usize,
    pub max_rel: f64,
}

impl FdReport {
    pub fn merge(&mut self, o: FdReport) {
        self.checked += o.checked;
        self.excluded += o.excluded;
        self.max_rel = self.max_rel.max(o.max_rel);
    }
}

pub fn hash_of(f: impl FnOnce(&mut DefaultHasher)) -> u64 {
    let mut h = DefaultHasher::new();
    f(&mut h);
    h.finish()
}

/// Central differences of `f` at `x` along the listed coordinates. `f`
/// returns the objective and a hash of the discrete choices it made; a
/// coordinate whose ±ε evaluations change that structure sits on a kink and
/// is skipped (counted in `excluded`).
pub fn fd_check(
    x: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    mut f: impl FnMut(&[f64]) -> (f64, u64),
) -> FdReport {
    let (_, base) = f(x);
    let mut rep = FdReport::default();
    let mut xp = x.to_vec();
    for i in coords {
        xp[i] = x[i] + FD_EPS;
        let (fp, hp) = f(&xp);
        xp[i] = x[i] - FD_EPS;
        let (fm, hm) = f(&xp);
        xp[i] = x[i];
        if hp != base || hm != base {
            rep.excluded += 1;
            continue;
        }
        let num = (fp - fm) / (2.0 * FD_EPS);
        rep.checked += 1;
        let e = rel_err(analytic[i], num);
        if e > 1e-4 && std::env::var("FD_VERBOSE").is_ok() {
            eprintln!("coord {i}: analytic {} numeric {num} rel {e}", analytic[i]);
        }
        rep.max_rel = rep.max_rel.max(e);
    }
    rep
}

pub fn flatten(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

pub fn unflatten(x: &[f64]) -> Vec<Vec3> {
    x.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}
