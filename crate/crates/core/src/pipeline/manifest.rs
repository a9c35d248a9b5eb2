//! JSON-lines dataset manifest: one record per generated scene.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::scenegen::{CameraConfig, SceneMode};

use super::PipelineError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestObject {
    pub name: String,
    /// Mask label for this object.
    pub id: u8,
    /// Posed mesh file, relative to the scene directory.
    pub mesh: String,
    /// Visibility ratio in the full scene, when rendered.
    pub vr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub version: u32,
    pub seed: u64,
    pub mode: SceneMode,
    /// Scene directory, relative to the manifest file.
    pub scene_dir: String,
    pub camera: CameraConfig,
    pub objects: Vec<ManifestObject>,
}

/// Loaded manifest with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn scene_dir(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.scene_dir)
    }

    pub fn scene_json(&self, record: &ManifestRecord) -> PathBuf {
        self.scene_dir(record).join("scene.json")
    }

    pub fn mesh_path(&self, record: &ManifestRecord, object: &ManifestObject) -> PathBuf {
        self.scene_dir(record).join(&object.mesh)
    }

    pub fn scene_mask(&self, record: &ManifestRecord) -> PathBuf {
        self.scene_dir(record).join("mask_scene.pgm")
    }

    pub fn solo_mask(&self, record: &ManifestRecord, object: &ManifestObject) -> PathBuf {
        self.scene_dir(record).join(format!("mask_{}.pgm", object.name))
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), PipelineError> {
    let mut seeds = std::collections::BTreeSet::new();
    for r in records {
        if !seeds.insert(r.seed) {
            return Err(PipelineError::DuplicateSeed { seed: r.seed });
        }
    }
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    crate::numeric::checkpoint::atomic_write(path, out.as_bytes())?;
    Ok(())
}

/// Parses the JSON-lines file and verifies every referenced file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut records = Vec::new();
    let mut seeds = std::collections::BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord =
            serde_json::from_str(line).map_err(|e| PipelineError::ManifestParse {
                line: line_no,
                reason: e.to_string(),
            })?;
        if record.version != MANIFEST_VERSION {
            return Err(PipelineError::ManifestParse {
                line: line_no,
                reason: format!(
                    "format version {} unsupported (expected {MANIFEST_VERSION})",
                    record.version
                ),
            });
        }
        if !seeds.insert(record.seed) {
            return Err(PipelineError::DuplicateSeed { seed: record.seed });
        }
        records.push(record);
    }

    let manifest = Manifest { root, records };
    for (i, record) in manifest.records.iter().enumerate() {
        let mut required = vec![manifest.scene_json(record), manifest.scene_mask(record)];
        for obj in &record.objects {
            required.push(manifest.mesh_path(record, obj));
            required.push(manifest.solo_mask(record, obj));
        }
        for p in required {
            if !p.exists() {
                return Err(PipelineError::MissingFile {
                    record: i,
                    path: p.display().to_string(),
                });
            }
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{
        generate_interaction, save_scene, GenConfig, RadiusPolicy, SceneAssets,
    };

    fn record(seed: u64, dir: &str) -> ManifestRecord {
        ManifestRecord {
            version: MANIFEST_VERSION,
            seed,
            mode: SceneMode::HandHand,
            scene_dir: dir.to_string(),
            camera: CameraConfig::default(),
            objects: vec![
                ManifestObject {
                    name: "hand0".into(),
                    id: 1,
                    mesh: "hand0.obj".into(),
                    vr: Some(0.8),
                },
                ManifestObject {
                    name: "hand1".into(),
                    id: 2,
                    mesh: "hand1.obj".into(),
                    vr: Some(1.0),
                },
            ],
        }
    }

    fn write_scene_files(root: &Path, dir: &str, seed: u64) {
        let assets = SceneAssets::new(crate::mesh::hand_template(), &RadiusPolicy::default());
        let scene = generate_interaction(&assets, seed, &GenConfig::default()).unwrap();
        save_scene(&root.join(dir), &assets, &scene).unwrap();
    }

    #[test]
    fn round_trip_preserves_records() {
        let tmp = tempfile::tempdir().unwrap();
        let records: Vec<ManifestRecord> = (0..5)
            .map(|i| {
                let dir = format!("scene_{i:04}");
                write_scene_files(tmp.path(), &dir, 30 + i);
                record(30 + i, &dir)
            })
            .collect();
        let path = tmp.path().join("manifest.jsonl");
        write_manifest(&path, &records).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.records, records);
        assert_eq!(loaded.root, tmp.path());
    }

    #[test]
    fn empty_manifest_loads_as_empty_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("manifest.jsonl");
        std::fs::write(&path, "").unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn corrupt_line_reports_its_number() {
        let tmp = tempfile::tempdir().unwrap();
        write_scene_files(tmp.path(), "scene_0000", 31);
        let good = serde_json::to_string(&record(31, "scene_0000")).unwrap();
        let path = tmp.path().join("manifest.jsonl");
        std::fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        match load_manifest(&path) {
            Err(PipelineError::ManifestParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_referenced_file_names_the_record() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("manifest.jsonl");
        write_manifest(&path, &[record(9, "scene_gone")]).unwrap();
        match load_manifest(&path) {
            Err(PipelineError::MissingFile { record, path }) => {
                assert_eq!(record, 0);
                assert!(path.contains("scene_gone"));
            }
            other => panic!("expected missing file, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_seeds_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("manifest.jsonl");
        let err = write_manifest(&path, &[record(5, "a"), record(5, "b")]);
        assert!(matches!(err, Err(PipelineError::DuplicateSeed { seed: 5 })));
    }
}
