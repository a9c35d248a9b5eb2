//! Synthetic interacting-hand scenes: collision proxies, constrained pose
//! sampling, and mask rendering.

pub mod capsule;
pub mod interact;
pub mod raster;

use thiserror::Error;

use crate::mesh::MeshError;

#[derive(Debug, Error)]
pub enum SceneGenError {
    #[error("no collision-free placement found for seed {seed}")]
    PlacementFailed { seed: u64 },
    #[error("approach never reached contact for seed {seed}")]
    ApproachFailed { seed: u64 },
    #[error("bad generation config: {reason}")]
    BadConfig { reason: String },
    #[error("bad mask file {path}: {reason}")]
    BadMask { path: String, reason: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub use capsule::{
    capsules_from_chain, capsules_intersect, point_segment_distance, segment_segment_distance,
    structural_exemptions, Capsule, RadiusPolicy,
};
pub use interact::{
    generate_interaction, load_scene, posed_world, posed_world_mesh, render_scene, save_scene,
    scene_valid, world_capsules, GenConfig, ObjectPose, Scene, SceneAssets, SceneMode, SceneObject,
};
pub use raster::{rasterize_masks, read_pgm, write_pgm, CameraConfig, MaskImage};
