use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    #[default]
    Max,
    Avg,
}

/// Records argmax rows (max mode) or group sizes (avg mode).
#[derive(Debug, Clone)]
pub struct PoolTape {
    mode: PoolMode,
    rows: usize,
    offsets: Vec<usize>,
    /// `groups × channels`, absolute row index of each maximum.
    argmax: Vec<usize>,
}

/// Pools contiguous row groups: group `g` owns rows `offsets[g]..offsets[g+1]`.
/// Max ties resolve to the lowest row.
pub fn set_pool(
    rows: ArrayView2<f64>,
    offsets: &[usize],
    mode: PoolMode,
) -> Result<(Array2<f64>, PoolTape)> {
    let groups = offsets.len().saturating_sub(1);
    let c = rows.ncols();
    if offsets.last().copied().unwrap_or(0) != rows.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "group offsets end at {:?}, rows = {}",
            offsets.last(),
            rows.nrows()
        )));
    }
    let mut out = Array2::zeros((groups, c));
    let mut argmax = Vec::new();
    if mode == PoolMode::Max {
        argmax.resize(groups * c, 0);
    }
    for g in 0..groups {
        let (lo, hi) = (offsets[g], offsets[g + 1]);
        if hi <= lo {
            return Err(Error::EmptyGroup(g));
        }
        match mode {
            PoolMode::Max => {
                for ch in 0..c {
                    let mut best = lo;
                    let mut best_v = rows[(lo, ch)];
                    for r in lo + 1..hi {
                        let v = rows[(r, ch)];
                        if v > best_v {
                            best_v = v;
                            best = r;
                        }
                    }
                    out[(g, ch)] = best_v;
                    argmax[g * c + ch] = best;
                }
            }
            PoolMode::Avg => {
                let inv = 1.0 / (hi - lo) as f64;
                let mut acc = out.row_mut(g);
                for r in lo..hi {
                    acc += &rows.row(r);
                }
                acc *= inv;
            }
        }
    }
    Ok((
        out,
        PoolTape {
            mode,
            rows: rows.nrows(),
            offsets: offsets.to_vec(),
            argmax,
        },
    ))
}

impl PoolTape {
    pub fn backward(&self, grad_out: ArrayView2<f64>) -> Result<Array2<f64>> {
        let groups = self.offsets.len() - 1;
        if grad_out.nrows() != groups {
            return Err(Error::ShapeMismatch(format!(
                "pool grad has {} rows, expected {groups}",
                grad_out.nrows()
            )));
        }
        let c = grad_out.ncols();
        let mut g = Array2::zeros((self.rows, c));
        for grp in 0..groups {
            match self.mode {
                PoolMode::Max => {
                    for ch in 0..c {
                        g[(self.argmax[grp * c + ch], ch)] += grad_out[(grp, ch)];
                    }
                }
                PoolMode::Avg => {
                    let (lo, hi) = (self.offsets[grp], self.offsets[grp + 1]);
                    let share = grad_out.row(grp).mapv(|v| v / (hi - lo) as f64);
                    for r in lo..hi {
                        g.row_mut(r).assign(&share);
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn hash_structure(&self, h: &mut impl std::hash::Hasher) {
        for &a in &self.argmax {
            h.write_usize(a);
        }
    }
}
