//! Synthetic scenes, depth unprojection and file formats.

mod camera;
mod generator;
mod io;

pub use camera::{project, unproject_depth, unproject_pixel, CameraIntrinsics, DEPTH_CUTOFF};
pub use generator::{generate_scene, GeneratedScene, ObjectInfo, ObjectKind, SceneConfig};
pub use io::{
    read_checkpoint, read_checkpoint_expecting, read_flow, read_sample, write_checkpoint, write_flow,
    write_sample, CHECKPOINT_VERSION, SAMPLE_VERSION,
};
