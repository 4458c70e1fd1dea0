//! Flow metrics and classical baselines.

mod ground;
mod icp;
mod metrics;
mod rigid;

pub use ground::{remove_ground_ransac, GroundResult};
pub use icp::{icp, IcpResult};
pub use metrics::{acc, epe, outlier_ratio, MetricReport, ACC_RELAXED, ACC_STRICT};
pub use rigid::{rigid_fit, weighted_ssd};
