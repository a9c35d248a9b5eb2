//! Multi-level mesh hierarchies.
//!
//! A hierarchy is a chain of meshes from finest to coarsest, connected by
//! one-hot downsampling matrices (surviving vertices keep their positions)
//! and barycentric upsampling matrices, with a spiral table per level.
//! `down[l] * up[l]` is exactly the identity at level `l+1`.

pub mod decimate;
pub mod spiral;
pub mod upsample;

pub use decimate::{decimate_qem, Decimated};
pub use spiral::{enumerate_spirals, SpiralTable};
pub use upsample::{build_downsample, build_upsample, closest_point_barycentric};

use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{obj, Mesh, MeshError};
use crate::numeric::{NumericError, SparseMatrix};

/// Spiral gather widths used for the shipped five-level template hierarchy,
/// finest level first.
pub const DEFAULT_SPIRAL_LENGTHS: [usize; 5] = [12, 12, 10, 9, 9];

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("cannot decimate a {vertices}-vertex mesh to {target}")]
    BadTarget { target: usize, vertices: usize },
    #[error("decimation stalled at {achieved} vertices on the way to {target}")]
    DecimationStuck { target: usize, achieved: usize },
    #[error("coarse mesh has no faces to project onto")]
    EmptyCoarseMesh,
    #[error("vertex {vertex} has no complete face fan; spirals need a closed manifold")]
    SpiralFan { vertex: usize },
    #[error("need one spiral length per level: {levels} levels, {lengths} lengths")]
    LevelCountMismatch { levels: usize, lengths: usize },
    #[error("level sizes must strictly decrease, got {prev} before {next}")]
    NotDecreasing { prev: usize, next: usize },
    #[error("hierarchy dir {path}: {reason}")]
    BadLayout { path: String, reason: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct HierarchyLevel {
    pub mesh: Mesh,
    pub spiral: SpiralTable,
}

#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    /// Finest level first.
    pub levels: Vec<HierarchyLevel>,
    /// `down[l]`: one-hot `n_{l+1} x n_l` selection into level `l+1`.
    pub down: Vec<SparseMatrix>,
    /// `up[l]`: barycentric `n_l x n_{l+1}` expansion from level `l+1`.
    pub up: Vec<SparseMatrix>,
}

/// Halved target sizes for the coarser levels: `n/2, n/4, ...`.
pub fn halving_sizes(vertices: usize, extra_levels: usize) -> Vec<usize> {
    (1..=extra_levels).map(|l| vertices >> l).collect()
}

pub fn build_hierarchy(
    mesh: &Mesh,
    targets: &[usize],
    spiral_lengths: &[usize],
) -> Result<MeshHierarchy, HierarchyError> {
    if spiral_lengths.len() != targets.len() + 1 {
        return Err(HierarchyError::LevelCountMismatch {
            levels: targets.len() + 1,
            lengths: spiral_lengths.len(),
        });
    }
    let mut prev = mesh.vertex_count();
    for &t in targets {
        if t >= prev {
            return Err(HierarchyError::NotDecreasing { prev, next: t });
        }
        prev = t;
    }
    mesh.validate_closed_manifold()?;

    let mut levels = vec![HierarchyLevel {
        mesh: mesh.clone(),
        spiral: enumerate_spirals(mesh, spiral_lengths[0])?,
    }];
    let mut down = Vec::new();
    let mut up = Vec::new();
    for (i, &target) in targets.iter().enumerate() {
        let fine = &levels[i].mesh;
        let dec = decimate_qem(fine, target)?;
        let d = build_downsample(fine.vertex_count(), &dec.kept);
        let u = build_upsample(fine, &dec.mesh, &dec.kept)?;
        debug_assert_eq!(d.matmul(&u)?, SparseMatrix::identity(target));
        down.push(d);
        up.push(u);
        levels.push(HierarchyLevel {
            spiral: enumerate_spirals(&dec.mesh, spiral_lengths[i + 1])?,
            mesh: dec.mesh,
        });
    }
    Ok(MeshHierarchy { levels, down, up })
}

#[derive(Serialize, Deserialize)]
struct HierarchyMeta {
    level_sizes: Vec<usize>,
    spiral_lengths: Vec<usize>,
}

impl MeshHierarchy {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.mesh.vertex_count()).collect()
    }

    /// Writes `hierarchy.json`, per-level meshes and spiral tables, and the
    /// resampling matrices into a directory.
    pub fn save(&self, dir: &Path) -> Result<(), HierarchyError> {
        fs::create_dir_all(dir)?;
        let meta = HierarchyMeta {
            level_sizes: self.level_sizes(),
            spiral_lengths: self.levels.iter().map(|l| l.spiral.length).collect(),
        };
        let meta_text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        crate::numeric::checkpoint::atomic_write(&dir.join("hierarchy.json"), meta_text.as_bytes())?;
        for (i, level) in self.levels.iter().enumerate() {
            obj::write_obj(&dir.join(format!("level{i}.obj")), &level.mesh)?;
            let spiral_text =
                serde_json::to_string(&level.spiral).expect("spiral serializes");
            crate::numeric::checkpoint::atomic_write(
                &dir.join(format!("spiral{i}.json")),
                spiral_text.as_bytes(),
            )?;
        }
        for (i, (d, u)) in self.down.iter().zip(&self.up).enumerate() {
            let mut buf = Vec::new();
            d.write_text(&mut buf)?;
            crate::numeric::checkpoint::atomic_write(&dir.join(format!("down{i}.txt")), &buf)?;
            let mut buf = Vec::new();
            u.write_text(&mut buf)?;
            crate::numeric::checkpoint::atomic_write(&dir.join(format!("up{i}.txt")), &buf)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, HierarchyError> {
        let bad = |reason: String| HierarchyError::BadLayout {
            path: dir.display().to_string(),
            reason,
        };
        let meta_text = fs::read_to_string(dir.join("hierarchy.json"))?;
        let meta: HierarchyMeta =
            serde_json::from_str(&meta_text).map_err(|e| bad(format!("hierarchy.json: {e}")))?;
        if meta.level_sizes.len() != meta.spiral_lengths.len() || meta.level_sizes.is_empty() {
            return Err(bad("level_sizes and spiral_lengths disagree".into()));
        }
        let mut levels = Vec::new();
        for (i, (&size, &len)) in meta
            .level_sizes
            .iter()
            .zip(&meta.spiral_lengths)
            .enumerate()
        {
            let mesh = obj::read_obj(&dir.join(format!("level{i}.obj")))?;
            if mesh.vertex_count() != size {
                return Err(bad(format!(
                    "level{i}.obj has {} vertices, meta says {size}",
                    mesh.vertex_count()
                )));
            }
            let spiral_text = fs::read_to_string(dir.join(format!("spiral{i}.json")))?;
            let spiral: SpiralTable =
                serde_json::from_str(&spiral_text).map_err(|e| bad(format!("spiral{i}: {e}")))?;
            if spiral.length != len || spiral.rows() != size {
                return Err(bad(format!("spiral{i} does not match meta")));
            }
            levels.push(HierarchyLevel { mesh, spiral });
        }
        let mut down = Vec::new();
        let mut up = Vec::new();
        for i in 0..meta.level_sizes.len() - 1 {
            let read = |name: String| -> Result<SparseMatrix, HierarchyError> {
                let f = fs::File::open(dir.join(&name))?;
                SparseMatrix::read_text(&mut BufReader::new(f))
                    .map_err(|e| bad(format!("{name}: {e}")))
            };
            let d = read(format!("down{i}.txt"))?;
            let u = read(format!("up{i}.txt"))?;
            let (nf, nc) = (meta.level_sizes[i], meta.level_sizes[i + 1]);
            if d.rows() != nc || d.cols() != nf || u.rows() != nf || u.cols() != nc {
                return Err(bad(format!("resampling matrices at step {i} have wrong shapes")));
            }
            down.push(d);
            up.push(u);
        }
        Ok(MeshHierarchy { levels, down, up })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::hand_template;

    fn small_hierarchy() -> MeshHierarchy {
        let template = hand_template();
        build_hierarchy(&template.mesh, &[80, 40], &[12, 12, 10]).unwrap()
    }

    #[test]
    fn builds_requested_sizes() {
        let h = small_hierarchy();
        assert_eq!(h.level_sizes(), vec![160, 80, 40]);
        assert_eq!(h.down.len(), 2);
    }

    #[test]
    fn down_times_up_is_identity() {
        let h = small_hierarchy();
        for (d, u) in h.down.iter().zip(&h.up) {
            assert_eq!(d.matmul(u).unwrap(), SparseMatrix::identity(d.rows()));
        }
    }

    #[test]
    fn upsample_rows_are_convex_combinations() {
        let h = small_hierarchy();
        for u in &h.up {
            for r in 0..u.rows() {
                let mut sum = 0.0;
                for &(_, _, w) in u.row(r) {
                    assert!(w >= 0.0);
                    sum += w;
                }
                assert!((sum - 1.0).abs() < 1e-12, "row {} sums to {}", r, sum);
            }
        }
    }

    #[test]
    fn halving_sizes_shift() {
        assert_eq!(halving_sizes(160, 4), vec![80, 40, 20, 10]);
        assert_eq!(halving_sizes(21, 2), vec![10, 5]);
    }

    #[test]
    fn save_load_round_trip() {
        let h = small_hierarchy();
        let dir = tempfile::tempdir().unwrap();
        h.save(dir.path()).unwrap();
        let back = MeshHierarchy::load(dir.path()).unwrap();
        assert_eq!(h.level_sizes(), back.level_sizes());
        for (a, b) in h.levels.iter().zip(&back.levels) {
            assert_eq!(a.mesh, b.mesh);
            assert_eq!(a.spiral, b.spiral);
        }
        for (a, b) in h.down.iter().zip(&back.down) {
            assert_eq!(a, b);
        }
        for (a, b) in h.up.iter().zip(&back.up) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let template = hand_template();
        assert!(matches!(
            build_hierarchy(&template.mesh, &[80], &[12]),
            Err(HierarchyError::LevelCountMismatch { .. })
        ));
    }
}
