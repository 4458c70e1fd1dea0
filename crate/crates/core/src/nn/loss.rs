use serde::{Deserialize, Serialize};

use crate::types::Vec3;

/// Huber loss on the Euclidean norm of `residual`:
/// `ρ²/2` for `ρ ≤ delta`, `delta·(ρ − delta/2)` beyond. Returns the loss
/// and its gradient with respect to the residual vector.
pub fn huber(residual: &Vec3, delta: f64) -> (f64, Vec3) {
    let rho = residual.norm();
    if rho <= delta {
        (0.5 * rho * rho, *residual)
    } else {
        (delta * (rho - 0.5 * delta), residual * (delta / rho))
    }
}

fn huber_scalar(x: f64, delta: f64) -> (f64, f64) {
    let a = x.abs();
    if a <= delta {
        (0.5 * x * x, x)
    } else {
        (delta * (a - 0.5 * delta), delta * x.signum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    #[default]
    HuberNorm,
    L2Norm,
    PerCoordSmoothL1,
}

/// Per-point loss and gradient for the selected variant.
pub fn point_loss(variant: LossVariant, residual: &Vec3, delta: f64) -> (f64, Vec3) {
    match variant {
        LossVariant::HuberNorm => huber(residual, delta),
        LossVariant::L2Norm => {
            let rho = residual.norm();
            if rho == 0.0 {
                (0.0, Vec3::zeros())
            } else {
                (rho, residual / rho)
            }
        }
        LossVariant::PerCoordSmoothL1 => {
            let mut total = 0.0;
            let mut g = Vec3::zeros();
            for a in 0..3 {
                let (l, d) = huber_scalar(residual[a], delta);
                total += l;
                g[a] = d;
            }
            (total, g)
        }
    }
}
