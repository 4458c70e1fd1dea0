use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::VoxelGrid;
use crate::types::{FlowField, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub lambda: f64,
    pub eps: f64,
    pub min_cluster_size: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            lambda: 3.0,
            eps: 0.3,
            min_cluster_size: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationResult {
    /// Cluster id per point, `-1` for points in clusters below the size limit.
    pub ids: Vec<i64>,
    pub count: usize,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clusters of the 6-D points `(x, y, z, λ·d)` under
/// Euclidean distance ≤ `eps`. Cluster ids are numbered in order of each
/// cluster's lowest member index.
pub fn motion_segment(frame1: &PointCloud, flow: &FlowField, cfg: &SegmentConfig) -> Result<SegmentationResult> {
    if flow.len() != frame1.len() {
        return Err(Error::LengthMismatch(flow.len(), frame1.len()));
    }
    if !(cfg.lambda >= 0.0) || !(cfg.eps > 0.0) {
        return Err(Error::InvalidConfig("segmentation needs lambda ≥ 0 and eps > 0".into()));
    }
    let n = frame1.len();
    let pts = &frame1.positions;
    let scaled: Vec<Vec3> = flow.vectors.iter().map(|d| d * cfg.lambda).collect();
    let eps2 = cfg.eps * cfg.eps;
    let grid = VoxelGrid::build(pts, cfg.eps * (1.0 + 1e-7));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut cand = Vec::new();
    for i in 0..n {
        cand.clear();
        grid.candidates_27(&pts[i], &mut cand);
        for &j in &cand {
            if j <= i {
                continue;
            }
            let d2 = (pts[i] - pts[j]).norm_squared() + (scaled[i] - scaled[j]).norm_squared();
            if d2 <= eps2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    let mut size = vec![0usize; n];
    for &r in &roots {
        size[r] += 1;
    }
    let mut id_of_root = vec![-1i64; n];
    let mut count = 0;
    for i in 0..n {
        // Roots are the lowest member index, so scanning in order numbers
        // clusters by their first point.
        if roots[i] == i && size[i] >= cfg.min_cluster_size.max(1) {
            id_of_root[i] = count as i64;
            count += 1;
        }
    }
    Ok(SegmentationResult {
        ids: roots.iter().map(|&r| id_of_root[r]).collect(),
        count,
    })
}
