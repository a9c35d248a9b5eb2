//! End-to-end orchestration: manifests, experiment configs, seed streams,
//! and the implementations behind the CLI subcommands.

pub mod dataset;
pub mod experiment;
pub mod manifest;
pub mod seeds;

use thiserror::Error;

use crate::hierarchy::HierarchyError;
use crate::mesh::MeshError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::numeric::NumericError;
use crate::scenegen::SceneGenError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("manifest line {line}: {reason}")]
    ManifestParse { line: usize, reason: String },
    #[error("manifest record {record} references missing file {path}")]
    MissingFile { record: usize, path: String },
    #[error("duplicate scene seed {seed}")]
    DuplicateSeed { seed: u64 },
    #[error("scene has no object named {name}")]
    MissingObject { name: String },
    #[error("bad configuration: {reason}")]
    BadConfig { reason: String },
    #[error("prediction/ground-truth counts differ: {pred} vs {gt}")]
    CountMismatch { pred: usize, gt: usize },
    #[error("prediction {pred} does not match ground-truth file {gt}")]
    NameMismatch { pred: String, gt: String },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    SceneGen(#[from] SceneGenError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub use dataset::{
    load_training_set, scene_image, scene_target, target_mesh, PreDecimation, FOCUS_OBJECT,
};
pub use experiment::{
    asset_root, run_build_hierarchy, run_eval, run_gen_scenes, run_predict, run_predict_one,
    run_train_toy, run_vr_report, template_mesh, BuildHierarchyOpts, EvalOpts, EvalSummary,
    ExperimentConfig, GenScenesOpts, PredictOpts, SampleReport, SplitConfig, TrainSummary,
    TrainToyOpts, VrReportOpts, ASSET_ENV,
};
pub use manifest::{
    load_manifest, write_manifest, Manifest, ManifestObject, ManifestRecord, MANIFEST_VERSION,
};
pub use seeds::{indexed, splitmix64, substream};
