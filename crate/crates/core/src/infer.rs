//! Inference orchestration: averaging over re-sampled runs and chunked
//! prediction for scenes larger than the network's receptive field.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FlowNet;
use crate::seed::Seed;
use crate::types::{FlowField, PointCloud, Vec3};

/// Anything that maps a frame pair to per-point flow and isolation flags.
pub trait FlowPredictor {
    fn predict_flow(&self, frame1: &PointCloud, frame2: &PointCloud, seed: Seed) -> Result<(FlowField, Vec<bool>)>;
}

impl FlowPredictor for FlowNet {
    fn predict_flow(&self, frame1: &PointCloud, frame2: &PointCloud, seed: Seed) -> Result<(FlowField, Vec<bool>)> {
        self.predict(frame1, frame2, seed)
    }
}

impl<F> FlowPredictor for F
where
    F: Fn(&PointCloud, &PointCloud, Seed) -> Result<(FlowField, Vec<bool>)>,
{
    fn predict_flow(&self, frame1: &PointCloud, frame2: &PointCloud, seed: Seed) -> Result<(FlowField, Vec<bool>)> {
        self(frame1, frame2, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub flow: FlowField,
    /// Points no run (or no chunk) could predict.
    pub isolated: Vec<bool>,
}

/// Mean of `runs` predictions, run `k` using `seed.derive(k)`. Points are
/// flagged isolated only when every run flags them.
pub fn predict_resampled(
    model: &impl FlowPredictor,
    frame1: &PointCloud,
    frame2: &PointCloud,
    runs: usize,
    seed: Seed,
) -> Result<Prediction> {
    if runs == 0 {
        return Err(Error::InvalidConfig("runs must be ≥ 1".into()));
    }
    let n = frame1.len();
    let mut sum = vec![Vec3::zeros(); n];
    let mut isolated = vec![true; n];
    for k in 0..runs {
        let (flow, iso) = model.predict_flow(frame1, frame2, seed.derive(k as u64))?;
        for i in 0..n {
            sum[i] += flow.vectors[i];
            isolated[i] &= iso[i];
        }
    }
    let inv = runs as f64;
    Ok(Prediction {
        flow: FlowField::new(sum.into_iter().map(|v| v / inv).collect()),
        isolated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkSpec {
    pub edge: f64,
    pub stride: f64,
    pub jitter_sigma: f64,
    /// Frame-2 points are gathered from the chunk window grown by this much.
    pub frame2_margin: f64,
}

impl Default for ChunkSpec {
    fn default() -> Self {
        ChunkSpec {
            edge: 5.0,
            stride: 2.5,
            jitter_sigma: 0.3,
            frame2_margin: 5.0,
        }
    }
}

impl ChunkSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.stride > 0.0 && self.stride <= self.edge && self.edge.is_finite()) {
            return Err(Error::InvalidConfig("chunk needs 0 < stride ≤ edge".into()));
        }
        if !(self.jitter_sigma >= 0.0) || !(self.frame2_margin >= 0.0) {
            return Err(Error::InvalidConfig("jitter and margin must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// An XY window `[x0, x0 + edge) × [y0, y0 + edge)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkWindow {
    pub lattice: (i64, i64),
    pub x0: f64,
    pub y0: f64,
}

impl ChunkWindow {
    fn contains(&self, p: &Vec3, edge: f64, margin: f64) -> bool {
        p.x >= self.x0 - margin && p.x < self.x0 + edge + margin && p.y >= self.y0 - margin && p.y < self.y0 + edge + margin
    }
}

/// Chunk windows over the XY bounding box of `points`: corners on the
/// lattice of stride multiples, each shifted along X or Y (axis chosen
/// uniformly per chunk) by Gaussian jitter.
pub fn chunk_windows(points: &[Vec3], chunk: &ChunkSpec, seed: Seed) -> Result<Vec<ChunkWindow>> {
    chunk.validate()?;
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let (mut lo, mut hi) = (points[0], points[0]);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let s = chunk.stride;
    let range = |a: f64, b: f64| {
        let first = ((a - chunk.edge) / s).floor() as i64 + 1;
        let last = (b / s).floor() as i64;
        first..=last
    };
    let normal = Normal::new(0.0, chunk.jitter_sigma).expect("sigma ≥ 0");
    let mut out = Vec::new();
    for kx in range(lo.x, hi.x) {
        for ky in range(lo.y, hi.y) {
            let (mut x0, mut y0) = (kx as f64 * s, ky as f64 * s);
            if chunk.jitter_sigma > 0.0 {
                let tag = (kx as u64).wrapping_mul(0x9E37_79B9).wrapping_add(ky as u64);
                let mut rng = seed.derive(tag).rng();
                let shift = normal.sample(&mut rng);
                if rng.random_bool(0.5) {
                    x0 += shift;
                } else {
                    y0 += shift;
                }
            }
            out.push(ChunkWindow {
                lattice: (kx, ky),
                x0,
                y0,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedPrediction {
    pub flow: FlowField,
    /// Frame-1 points that no chunk predicted (their flow is zero).
    pub isolated: Vec<bool>,
    /// Number of chunks that predicted each frame-1 point.
    pub coverage: Vec<u32>,
}

/// Runs [`predict_resampled`] on every (frame-1 window, enlarged frame-2
/// window) pair and averages per point over the chunks covering it. Every
/// chunk uses the same seed.
pub fn predict_chunked(
    model: &impl FlowPredictor,
    frame1: &PointCloud,
    frame2: &PointCloud,
    chunk: &ChunkSpec,
    runs: usize,
    seed: Seed,
) -> Result<ChunkedPrediction> {
    let windows = chunk_windows(&frame1.positions, chunk, seed.derive(0xC4))?;
    let n = frame1.len();
    let mut mean = vec![Vec3::zeros(); n];
    let mut coverage = vec![0u32; n];
    let run_seed = seed.derive(0x5A);
    for w in &windows {
        let idx1: Vec<usize> = (0..n)
            .filter(|&i| w.contains(&frame1.positions[i], chunk.edge, 0.0))
            .collect();
        if idx1.is_empty() {
            continue;
        }
        let idx2: Vec<usize> = (0..frame2.len())
            .filter(|&j| w.contains(&frame2.positions[j], chunk.edge, chunk.frame2_margin))
            .collect();
        if idx2.is_empty() {
            continue;
        }
        let sub1 = frame1.subset(&idx1);
        let sub2 = frame2.subset(&idx2);
        let pred = predict_resampled(model, &sub1, &sub2, runs, run_seed)?;
        for (k, &i) in idx1.iter().enumerate() {
            coverage[i] += 1;
            let delta = (pred.flow.vectors[k] - mean[i]) / coverage[i] as f64;
            mean[i] += delta;
        }
    }
    Ok(ChunkedPrediction {
        flow: FlowField::new(mean),
        isolated: coverage.iter().map(|&c| c == 0).collect(),
        coverage,
    })
}
