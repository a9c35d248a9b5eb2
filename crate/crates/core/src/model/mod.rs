//! Mesh reconstruction model: spiral convolutions over the hierarchy, a
//! staged multi-path decoder with cross-resolution fusion, and training.

pub mod fusion;
pub mod layers;
pub mod network;
pub mod params;
pub mod train;

pub use fusion::{Fusion, ResamplePlan};
pub use layers::{GraphResBlock, LayerNormLayer, Linear, SpiralConv};
pub use network::{ModelConfig, MeshDecoder};
pub use params::{Binding, ParamId, ParamStore};
pub use train::{augment_item, normalize_image, train, EpochLog, TrainConfig, TrainItem};

use thiserror::Error;

use crate::numeric::NumericError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("fusion input missing features for level {level}")]
    MissingLevel { level: usize },
    #[error("configuration mismatch: {reason}")]
    ConfigMismatch { reason: String },
    #[error("expected image shape {expected:?}, got {got:?}")]
    BadImage {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint mismatch: {reason}")]
    CheckpointMismatch { reason: String },
    #[error("training requires a non-empty dataset")]
    EmptyDataset,
}
