use crate::error::{Error, Result};
use crate::spatial::knn;
use crate::types::{FlowField, PointCloud, RigidTransform};

use super::rigid::rigid_fit;

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub flow: FlowField,
    /// Root-mean-square correspondence distance before each iteration's fit,
    /// followed by the value at the final transform.
    pub history: Vec<f64>,
    pub iterations: usize,
}

/// Point-to-point ICP with one-directional nearest-neighbor matching and no
/// rejection. Stops when the RMS correspondence distance improves by less
/// than `tol` or after `max_iters` fits.
pub fn icp(frame1: &PointCloud, frame2: &PointCloud, max_iters: usize, tol: f64) -> Result<IcpResult> {
    if frame1.len() < 3 || frame2.len() < 3 {
        return Err(Error::DegenerateConfiguration("icp needs ≥ 3 points per frame".into()));
    }
    let rms = |cur: &[crate::Vec3]| -> Result<(f64, Vec<crate::Vec3>)> {
        let nn = knn(&frame2.positions, cur, 1)?;
        let matched: Vec<_> = nn.iter().map(|l| frame2.positions[l[0]]).collect();
        let s: f64 = cur.iter().zip(&matched).map(|(a, b)| (a - b).norm_squared()).sum();
        Ok(((s / cur.len() as f64).sqrt(), matched))
    };
    let mut tf = RigidTransform::identity();
    let mut cur = frame1.positions.clone();
    let (mut err, mut matched) = rms(&cur)?;
    let mut history = vec![err];
    let mut iterations = 0;
    while iterations < max_iters {
        let step = rigid_fit(&cur, &matched, None)?;
        tf = step.compose(&tf);
        cur = frame1.positions.iter().map(|p| tf.apply(p)).collect();
        iterations += 1;
        let (next, m) = rms(&cur)?;
        history.push(next);
        matched = m;
        let improved = err - next;
        err = next;
        if improved < tol {
            break;
        }
    }
    let flow = FlowField::new(cur.iter().zip(&frame1.positions).map(|(a, b)| a - b).collect());
    Ok(IcpResult {
        transform: tf,
        flow,
        history,
        iterations,
    })
}
