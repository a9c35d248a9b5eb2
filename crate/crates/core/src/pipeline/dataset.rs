//! Conversion of generated scenes into training items: mask-derived input
//! images and root-relative coarse vertex targets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::{Mesh, ROOT_JOINT};
use crate::model::TrainItem;
use crate::numeric::Tensor;
use crate::scenegen::{load_scene, posed_world, read_pgm, MaskImage, ObjectPose, SceneAssets};

use super::manifest::{Manifest, ManifestRecord};
use super::PipelineError;

/// The hand every prediction and report targets.
pub const FOCUS_OBJECT: &str = "hand0";

/// Vertex selection from a one-off decimation run before the hierarchy was
/// built. Coarse ground truth is the retained subset of the fine vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreDecimation {
    pub source_vertices: usize,
    pub kept: Vec<usize>,
}

pub const PRE_FILE: &str = "pre.json";

impl PreDecimation {
    pub fn select(&self, fine: &[[f64; 3]]) -> Result<Vec<[f64; 3]>, PipelineError> {
        if fine.len() != self.source_vertices {
            return Err(PipelineError::BadConfig {
                reason: format!(
                    "pre-decimation expects {} source vertices, got {}",
                    self.source_vertices,
                    fine.len()
                ),
            });
        }
        Ok(self.kept.iter().map(|&i| fine[i]).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self)?;
        crate::numeric::checkpoint::atomic_write(&dir.join(PRE_FILE), text.as_bytes())?;
        Ok(())
    }

    /// None when the hierarchy was built directly on the template.
    pub fn load(dir: &Path) -> Result<Option<Self>, PipelineError> {
        let path = dir.join(PRE_FILE);
        if !path.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(path)?)?))
    }
}

fn box_downsample(mask: &MaskImage, predicate: impl Fn(u8) -> bool, size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        let r0 = r * mask.height / size;
        let r1 = ((r + 1) * mask.height / size).max(r0 + 1);
        for c in 0..size {
            let c0 = c * mask.width / size;
            let c1 = ((c + 1) * mask.width / size).max(c0 + 1);
            let mut sum = 0.0;
            for v in r0..r1 {
                for u in c0..c1 {
                    if predicate(mask.at(u, v)) {
                        sum += 1.0;
                    }
                }
            }
            out.push(sum / ((r1 - r0) * (c1 - c0)) as f64);
        }
    }
    out
}

/// Three-channel image for one scene: the focus object's visible pixels,
/// its unoccluded solo silhouette, and everything else in the scene.
pub fn scene_image(
    manifest: &Manifest,
    record: &ManifestRecord,
    image_size: usize,
) -> Result<Tensor, PipelineError> {
    let focus = record
        .objects
        .iter()
        .find(|o| o.name == FOCUS_OBJECT)
        .ok_or_else(|| PipelineError::MissingObject {
            name: FOCUS_OBJECT.to_string(),
        })?;
    let scene_mask = read_pgm(&manifest.scene_mask(record))?;
    let solo_mask = read_pgm(&manifest.solo_mask(record, focus))?;
    let id = focus.id;

    let mut values = box_downsample(&scene_mask, |l| l == id, image_size);
    values.extend(box_downsample(&solo_mask, |l| l == id, image_size));
    values.extend(box_downsample(&scene_mask, |l| l != 0 && l != id, image_size));
    Ok(Tensor::from_vec(&[3, image_size, image_size], values).expect("sizes agree"))
}

/// Root-relative vertex target for the focus hand, optionally reduced to the
/// pre-decimated subset.
pub fn scene_target(
    assets: &SceneAssets,
    manifest: &Manifest,
    record: &ManifestRecord,
    pre: Option<&PreDecimation>,
) -> Result<Tensor, PipelineError> {
    let scene = load_scene(&manifest.scene_dir(record))?;
    let index = scene
        .objects
        .iter()
        .position(|o| o.name == FOCUS_OBJECT && matches!(o.pose, ObjectPose::Hand { .. }))
        .ok_or_else(|| PipelineError::MissingObject {
            name: FOCUS_OBJECT.to_string(),
        })?;
    let posed = posed_world(assets, &scene, index);
    let root = posed.joints[ROOT_JOINT];
    let centered: Vec<[f64; 3]> = posed
        .vertices
        .iter()
        .map(|v| [v[0] - root[0], v[1] - root[1], v[2] - root[2]])
        .collect();
    let target = match pre {
        Some(p) => p.select(&centered)?,
        None => centered,
    };
    let flat: Vec<f64> = target.iter().flat_map(|v| v.iter().copied()).collect();
    Ok(Tensor::from_vec(&[target.len(), 3], flat).expect("sizes agree"))
}

/// Same subset as a mesh, with the coarse connectivity supplied by the
/// hierarchy's finest level.
pub fn target_mesh(target: &Tensor, faces: &[[usize; 3]]) -> Result<Mesh, PipelineError> {
    let n = target.shape()[0];
    let vertices: Vec<[f64; 3]> = (0..n)
        .map(|r| [target.at(r, 0), target.at(r, 1), target.at(r, 2)])
        .collect();
    Ok(Mesh::new(vertices, faces.to_vec())?)
}

pub fn load_training_set(
    assets: &SceneAssets,
    manifest: &Manifest,
    pre: Option<&PreDecimation>,
    image_size: usize,
) -> Result<Vec<TrainItem>, PipelineError> {
    manifest
        .records
        .iter()
        .map(|record| {
            Ok(TrainItem {
                image: scene_image(manifest, record, image_size)?,
                target: scene_target(assets, manifest, record, pre)?,
            })
        })
        .collect()
}
