//! Applications built on predicted flow: scan registration, motion
//! segmentation, and runtime benchmarking.

mod bench;
mod register;
mod segment;

pub use bench::{bench, BenchRow};
pub use register::{register_scans, Registration};
pub use segment::{motion_segment, SegmentConfig, SegmentationResult};
