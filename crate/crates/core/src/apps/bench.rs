use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::FlowNet;
use crate::seed::Seed;
use crate::types::{PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub points: usize,
    pub batch: usize,
    /// Median wall time of one forward pass over the whole batch.
    pub ms: f64,
}

impl BenchRow {
    pub fn line(&self) -> String {
        format!("{} {} {:.3}", self.points, self.batch, self.ms)
    }
}

fn random_cloud(n: usize, half: f64, seed: Seed) -> PointCloud {
    let mut rng = seed.rng();
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(0.0..half / 2.0),
                )
            })
            .collect(),
    )
}

/// Median over `repeats` (at least 5) timed inference passes per
/// `(points, batch)` row, on random clouds inside an 8 m box.
pub fn bench(net: &FlowNet, sizes: &[(usize, usize)], repeats: usize, seed: Seed) -> Result<Vec<BenchRow>> {
    let repeats = repeats.max(5);
    let mut rows = Vec::with_capacity(sizes.len());
    for (r, &(n, batch)) in sizes.iter().enumerate() {
        if n == 0 || batch == 0 {
            return Err(Error::InvalidConfig("bench sizes must be ≥ 1".into()));
        }
        let pairs: Vec<(PointCloud, PointCloud)> = (0..batch)
            .map(|b| {
                let s = seed.derive(r as u64).derive(b as u64);
                (random_cloud(n, 4.0, s.derive(1)), random_cloud(n, 4.0, s.derive(2)))
            })
            .collect();
        let mut times = Vec::with_capacity(repeats);
        for k in 0..repeats {
            let t = Instant::now();
            for (a, b) in &pairs {
                net.predict(a, b, seed.derive(k as u64))?;
            }
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            points: n,
            batch,
            ms: times[times.len() / 2],
        });
    }
    Ok(rows)
}
