use crate::error::Result;
use crate::eval::rigid_fit;
use crate::infer::FlowPredictor;
use crate::seed::Seed;
use crate::types::{FlowField, PointCloud, RigidTransform};

#[derive(Debug, Clone)]
pub struct Registration {
    pub transform: RigidTransform,
    /// Frame 1 moved by `transform`.
    pub warped: PointCloud,
    /// Accumulated flow over all passes.
    pub flow: FlowField,
}

/// Predicts flow, then for each further pass predicts the residual flow from
/// the already-warped frame 1 and accumulates it. The rigid transform is the
/// least-squares fit from frame 1 to frame 1 + total flow, which has one
/// exact correspondence per point; points isolated in the last pass get zero
/// weight unless every point is isolated.
pub fn register_scans(
    model: &impl FlowPredictor,
    frame1: &PointCloud,
    frame2: &PointCloud,
    passes: usize,
    seed: Seed,
) -> Result<Registration> {
    let passes = passes.max(1);
    let mut total = FlowField::zeros(frame1.len());
    let mut isolated = vec![false; frame1.len()];
    for k in 0..passes {
        let moved = PointCloud::new(total.warp(&frame1.positions));
        let (residual, iso) = model.predict_flow(&moved, frame2, seed.derive(k as u64))?;
        for (t, r) in total.vectors.iter_mut().zip(&residual.vectors) {
            *t += r;
        }
        isolated = iso;
    }
    let target = total.warp(&frame1.positions);
    let weights: Vec<f64> = isolated.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
    let use_weights = weights.iter().filter(|&&w| w > 0.0).count() >= 3;
    let transform = rigid_fit(&frame1.positions, &target, use_weights.then_some(weights.as_slice()))?;
    Ok(Registration {
        warped: frame1.transformed(&transform),
        transform,
        flow: total,
    })
}
