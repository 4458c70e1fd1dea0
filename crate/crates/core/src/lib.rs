//! Scene flow estimation on raw point clouds: learnable point-set layers,
//! a two-frame flow network with exact gradients, training with a cycle
//! consistency term, chunked and resampled inference, synthetic data,
//! metrics and classical baselines.

pub mod apps;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod infer;
pub mod layers;
pub mod model;
pub mod nn;
pub mod seed;
pub mod spatial;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use seed::Seed;
pub use types::{FlowField, PointCloud, RigidTransform, SceneSample, Vec3};
