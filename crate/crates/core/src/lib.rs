//! Hand mesh reconstruction toolkit.
//!
//! The crate is organized bottom-up:
//!
//! * [`numeric`]: dense tensors, a reverse-mode autodiff tape, sparse
//!   matrices, a transformer encoder block, Adam, and checkpoint I/O.
//! * [`mesh`]: triangle meshes, OBJ I/O, kinematic chains, local joint
//!   frames, forward-kinematic posing, and joint regression.
//! * [`hierarchy`]: quadric decimation, barycentric upsampling, spiral
//!   neighborhood enumeration, and multi-level mesh hierarchies.
//! * [`model`]: spiral graph convolutions and the multi-path mesh decoder,
//!   with its training loop.
//! * [`scenegen`]: capsule collision proxies, the interacting-hands scene
//!   generator, and mask rasterization.
//! * [`metrics`]: Procrustes alignment, pose/surface error metrics, F-score,
//!   PCK AUC, and the visibility-ratio report.
//! * [`pipeline`]: experiment configs, scene manifests, and the end-to-end
//!   runs behind the CLI subcommands.

pub mod hierarchy;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod pipeline;
pub mod scenegen;
