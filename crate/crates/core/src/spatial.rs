//! Exact neighborhood queries and farthest point sampling.
//!
//! All routines compare squared Euclidean distances computed as
//! `dx*dx + dy*dy + dz*dz`, and break ties by ascending source index, so
//! results are pure functions of their inputs (and seed).

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::Seed;
use crate::types::Vec3;

#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Per-query neighbor indices in compressed row form. Each query's list is
/// sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborList {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl NeighborList {
    pub fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut indices = Vec::new();
        for l in lists {
            indices.extend(l);
            offsets.push(indices.len());
        }
        NeighborList { offsets, indices }
    }

    pub fn query_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn get(&self, query: usize) -> &[usize] {
        &self.indices[self.offsets[query]..self.offsets[query + 1]]
    }

    pub fn total(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.query_count()).map(move |j| self.get(j))
    }

    pub fn to_lists(&self) -> Vec<Vec<usize>> {
        self.iter().map(|l| l.to_vec()).collect()
    }
}

type CellKey = [i64; 3];

/// Uniform hash grid over a fixed point set.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
    min_key: CellKey,
    max_key: CellKey,
}

impl VoxelGrid {
    pub fn build(points: &[Vec3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell edge must be positive");
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        let mut min_key = [i64::MAX; 3];
        let mut max_key = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = Self::key_of(cell, p);
            for a in 0..3 {
                min_key[a] = min_key[a].min(k[a]);
                max_key[a] = max_key[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i);
        }
        VoxelGrid {
            cell,
            cells,
            min_key,
            max_key,
        }
    }

    fn key_of(cell: f64, p: &Vec3) -> CellKey {
        let f = |v: f64| (v / cell).floor().clamp(-1e15, 1e15) as i64;
        [f(p.x), f(p.y), f(p.z)]
    }

    pub fn key(&self, p: &Vec3) -> CellKey {
        Self::key_of(self.cell, p)
    }

    fn cell_points(&self, k: &CellKey) -> &[usize] {
        self.cells.get(k).map_or(&[], |v| v.as_slice())
    }

    /// All points stored in cells within Chebyshev distance 1 of `p`'s cell.
    pub(crate) fn candidates_27(&self, p: &Vec3, out: &mut Vec<usize>) {
        let k = self.key(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    out.extend_from_slice(self.cell_points(&[k[0] + dx, k[1] + dy, k[2] + dz]));
                }
            }
        }
    }

    /// Cells exactly on the Chebyshev shell of radius `s` around `center`.
    fn shell(&self, center: &CellKey, s: i64, out: &mut Vec<usize>) {
        for dx in -s..=s {
            for dy in -s..=s {
                let edge = dx.abs() == s || dy.abs() == s;
                if edge {
                    for dz in -s..=s {
                        out.extend_from_slice(self.cell_points(&[
                            center[0] + dx,
                            center[1] + dy,
                            center[2] + dz,
                        ]));
                    }
                } else {
                    for dz in [-s, s] {
                        out.extend_from_slice(self.cell_points(&[
                            center[0] + dx,
                            center[1] + dy,
                            center[2] + dz,
                        ]));
                    }
                }
            }
        }
    }

    fn max_shell(&self, center: &CellKey) -> i64 {
        (0..3)
            .map(|a| (center[a] - self.min_key[a]).max(self.max_key[a] - center[a]))
            .max()
            .unwrap_or(0)
    }

    /// Lower bound on the distance from `p` to any point outside the cells
    /// of Chebyshev radius ≤ `s` around `p`'s cell.
    fn outside_bound(&self, p: &Vec3, center: &CellKey, s: i64) -> f64 {
        let c = self.cell;
        let mut b = f64::INFINITY;
        for a in 0..3 {
            let lo = (center[a] - s) as f64 * c;
            let hi = (center[a] + s + 1) as f64 * c;
            b = b.min(p[a] - lo).min(hi - p[a]);
        }
        // Slack for rounding in the floor-based cell assignment.
        b - 1e-9 * (1.0 + p.abs().max())
    }
}

/// Exact r-ball neighbors (`‖x_i − q_j‖ ≤ r`) of every query. When `cap` is
/// given and a ball holds more than `cap` points, a uniformly random
/// `cap`-subset is kept, drawn from `seed.derive(j)` for query `j`.
pub fn radius_neighbors(
    source: &[Vec3],
    queries: &[Vec3],
    r: f64,
    cap: Option<usize>,
    seed: Seed,
) -> Result<NeighborList> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidRadius(r));
    }
    if cap == Some(0) {
        return Err(Error::InvalidSpec("neighbor cap must be ≥ 1".into()));
    }
    let r2 = r * r;
    let cell = r.max(1e-9) * (1.0 + 1e-7);
    let grid = VoxelGrid::build(source, cell);
    let mut lists = Vec::with_capacity(queries.len());
    let mut cand = Vec::new();
    for (j, q) in queries.iter().enumerate() {
        cand.clear();
        grid.candidates_27(q, &mut cand);
        let mut hits: Vec<usize> = cand
            .iter()
            .copied()
            .filter(|&i| dist2(&source[i], q) <= r2)
            .collect();
        hits.sort_unstable();
        if let Some(k) = cap {
            if hits.len() > k {
                hits = subsample_sorted(&hits, k, seed.derive(j as u64));
            }
        }
        lists.push(hits);
    }
    Ok(NeighborList::from_lists(lists))
}

/// Uniform random `k`-subset of `items`, returned in ascending order.
pub(crate) fn subsample_sorted(items: &[usize], k: usize, seed: Seed) -> Vec<usize> {
    let mut rng = seed.rng();
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, items.len(), k)
        .into_iter()
        .map(|p| items[p])
        .collect();
    picked.sort_unstable();
    picked
}

/// The `k` nearest source points of each query, ascending by distance with
/// ties broken by ascending index.
pub fn knn(source: &[Vec3], queries: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k > source.len() {
        return Err(Error::KTooLarge {
            k,
            n: source.len(),
        });
    }
    if k == 0 {
        return Ok(vec![Vec::new(); queries.len()]);
    }
    let grid = VoxelGrid::build(source, knn_cell_size(source));
    let mut out = Vec::with_capacity(queries.len());
    let mut shell = Vec::new();
    let mut best: Vec<(f64, usize)> = Vec::new();
    for q in queries {
        best.clear();
        let center = grid.key(q);
        let max_s = grid.max_shell(&center);
        let mut s = 0;
        loop {
            shell.clear();
            grid.shell(&center, s, &mut shell);
            best.extend(shell.iter().map(|&i| (dist2(&source[i], q), i)));
            best.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best.truncate(k);
            if s >= max_s {
                break;
            }
            if best.len() == k {
                let bound = grid.outside_bound(q, &center, s);
                if bound > 0.0 && best[k - 1].0 < bound * bound {
                    break;
                }
            }
            s += 1;
        }
        out.push(best.iter().map(|&(_, i)| i).collect());
    }
    Ok(out)
}

fn knn_cell_size(points: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max();
    let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
    let cell = extent / per_axis;
    if cell.is_finite() && cell > 1e-9 {
        cell
    } else {
        1.0
    }
}

/// Greedy max-min subsampling. The first index is uniform from `seed`; each
/// next index maximizes the squared distance to the selected set, ties to
/// the lowest index.
pub fn farthest_point_sample(points: &[Vec3], m: usize, seed: Seed) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::MTooLarge { m, n });
    }
    let first = seed.rng().random_range(0..n);
    Ok(farthest_point_sample_from(points, m, first))
}

/// FPS with a fixed first pick.
pub fn farthest_point_sample_from(points: &[Vec3], m: usize, first: usize) -> Vec<usize> {
    let mut picks = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; points.len()];
    let mut current = first;
    picks.push(current);
    min_d[current] = f64::NEG_INFINITY;
    while picks.len() < m {
        let c = points[current];
        let mut best = 0;
        let mut best_d = f64::NEG_INFINITY;
        for (i, (p, d)) in points.iter().zip(min_d.iter_mut()).enumerate() {
            let di = dist2(p, &c);
            if di < *d {
                *d = di;
            }
            if *d > best_d {
                best_d = *d;
                best = i;
            }
        }
        current = best;
        picks.push(current);
        min_d[current] = f64::NEG_INFINITY;
    }
    picks
}
