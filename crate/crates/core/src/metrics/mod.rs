//! Pose and mesh evaluation: similarity alignment, error scores, and the
//! visibility-bucketed report.

pub mod align;
pub mod score;
pub mod visibility;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point sets differ in size: pred {pred}, gt {gt}")]
    ShapeMismatch { pred: usize, gt: usize },
    #[error("alignment needs at least 3 points, got {got}")]
    TooFewPoints { got: usize },
    #[error("point set has no spatial extent")]
    DegeneratePoints,
    #[error("threshold must be positive, got {got}")]
    BadThreshold { got: f64 },
    #[error("empty point set")]
    EmptyPointSet,
    #[error("mask sizes differ: scene {scene:?}, solo {only:?}")]
    MaskShapeMismatch {
        scene: (usize, usize),
        only: (usize, usize),
    },
    #[error("object {id} has no pixels in its solo mask")]
    ObjectNotVisible { id: u8 },
}

pub use align::{procrustes_align, Alignment};
pub use score::{aligned_errors, f_score, pa_mpjpe, pa_mpvpe, pck_auc, MM_PER_M};
pub use visibility::{
    bucket_report, format_bucket_table, visibility_ratio, vr_bucket, BucketRow, SampleScore,
    VR_BUCKETS,
};

/// F-score distances reported, millimeters.
pub const F_THRESHOLDS_MM: [u32; 2] = [5, 15];
/// PCK threshold grid: `PCK_STEPS` equal steps up to this bound (meters).
pub const PCK_MAX_M: f64 = 0.020;
pub const PCK_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pa_mpjpe_mm: f64,
    pub pa_mpvpe_mm: f64,
    /// Keyed by threshold in millimeters.
    pub f_scores: BTreeMap<u32, f64>,
    pub pck: Vec<f64>,
    pub auc: f64,
    pub vr: Option<f64>,
    pub vr_bucket: Option<String>,
}

pub fn bucket_label(index: usize) -> String {
    let (lo, hi) = VR_BUCKETS[index];
    let close = if index == VR_BUCKETS.len() - 1 { ']' } else { ')' };
    format!("[{lo:.2}, {hi:.2}{close}")
}

/// Scores one prediction against ground truth. Joints and vertices are
/// aligned independently; surface scores come from the vertex alignment.
pub fn evaluate_pair(
    pred_joints: &[[f64; 3]],
    gt_joints: &[[f64; 3]],
    pred_vertices: &[[f64; 3]],
    gt_vertices: &[[f64; 3]],
) -> Result<EvalReport, MetricsError> {
    let joint_align = procrustes_align(pred_joints, gt_joints)?;
    let joints = joint_align.apply_all(pred_joints);
    let joint_errors: Vec<f64> = joints
        .iter()
        .zip(gt_joints)
        .map(|(p, g)| {
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
        })
        .collect();
    let pa_mpjpe_mm =
        joint_errors.iter().sum::<f64>() / joint_errors.len() as f64 * MM_PER_M;
    let (pck, auc) = pck_auc(&joints, gt_joints, PCK_MAX_M, PCK_STEPS)?;

    let vert_align = procrustes_align(pred_vertices, gt_vertices)?;
    let vertices = vert_align.apply_all(pred_vertices);
    let pa_mpvpe_mm = vertices
        .iter()
        .zip(gt_vertices)
        .map(|(p, g)| {
            ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt()
        })
        .sum::<f64>()
        / vertices.len() as f64
        * MM_PER_M;
    let mut f_scores = BTreeMap::new();
    for mm in F_THRESHOLDS_MM {
        f_scores.insert(mm, f_score(&vertices, gt_vertices, mm as f64 / MM_PER_M)?);
    }

    Ok(EvalReport {
        pa_mpjpe_mm,
        pa_mpvpe_mm,
        f_scores,
        pck,
        auc,
        vr: None,
        vr_bucket: None,
    })
}
