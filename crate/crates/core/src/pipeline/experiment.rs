//! Implementations behind the CLI subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hierarchy::{build_hierarchy, decimate_qem, halving_sizes, MeshHierarchy};
use crate::mesh::{hand_template, obj, Mesh};
use crate::metrics::{
    bucket_report, evaluate_pair, visibility_ratio, BucketRow, EvalReport, SampleScore,
};
use crate::model::{train, EpochLog, ModelConfig, MeshDecoder, TrainConfig};
use crate::model::normalize_image;
use crate::numeric::checkpoint::atomic_write;
use crate::scenegen::{
    generate_interaction, read_pgm, save_scene, GenConfig, RadiusPolicy, Scene, SceneAssets,
    SceneGenError, SceneMode,
};

use super::dataset::{load_training_set, scene_image, scene_target, target_mesh, PreDecimation};
use super::manifest::{
    load_manifest, write_manifest, Manifest, ManifestObject, ManifestRecord, MANIFEST_VERSION,
};
use super::seeds::{indexed, substream};
use super::PipelineError;

pub const ASSET_ENV: &str = "HANDMESH_ASSETS";

pub fn asset_root() -> PathBuf {
    std::env::var_os(ASSET_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("assets"))
}

/// Template mesh for hierarchy building: an explicit path wins, then a
/// shipped OBJ under the asset root, then the built-in template.
pub fn template_mesh(explicit: Option<&Path>) -> Result<Mesh, PipelineError> {
    if let Some(p) = explicit {
        return Ok(obj::read_obj(p)?);
    }
    let shipped = asset_root().join("template").join("hand.obj");
    if shipped.exists() {
        return Ok(obj::read_obj(&shipped)?);
    }
    Ok(hand_template().mesh)
}

/// Index-order map running `f` on a bounded worker pool.
fn parallel_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.max(1).min(n.max(1));
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let cursor = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().expect("slot lock") = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("worker filled slot"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct BuildHierarchyOpts {
    pub out: PathBuf,
    pub template: Option<PathBuf>,
    pub levels: usize,
    pub spiral_length: usize,
    /// Decimate the template to this many vertices first; the hierarchy then
    /// starts from the reduced mesh and ground truth is reduced to match.
    pub finest: Option<usize>,
}

impl Default for BuildHierarchyOpts {
    fn default() -> Self {
        BuildHierarchyOpts {
            out: PathBuf::from("hierarchy"),
            template: None,
            levels: 5,
            spiral_length: 9,
            finest: None,
        }
    }
}

pub fn run_build_hierarchy(opts: &BuildHierarchyOpts) -> Result<Vec<usize>, PipelineError> {
    if opts.levels < 2 {
        return Err(PipelineError::BadConfig {
            reason: "hierarchy needs at least 2 levels".to_string(),
        });
    }
    let full = template_mesh(opts.template.as_deref())?;
    std::fs::create_dir_all(&opts.out)?;
    let base = match opts.finest {
        Some(n) => {
            let dec = decimate_qem(&full, n)?;
            PreDecimation {
                source_vertices: full.vertex_count(),
                kept: dec.kept,
            }
            .save(&opts.out)?;
            dec.mesh
        }
        None => {
            // A stale reduction map would silently shrink ground truth.
            match std::fs::remove_file(opts.out.join(super::dataset::PRE_FILE)) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
            full
        }
    };
    let targets = halving_sizes(base.vertex_count(), opts.levels - 1);
    let lengths = vec![opts.spiral_length; opts.levels];
    let hierarchy = build_hierarchy(&base, &targets, &lengths)?;
    hierarchy.save(&opts.out)?;
    Ok(hierarchy.level_sizes())
}

#[derive(Debug, Clone)]
pub struct GenScenesOpts {
    pub out: PathBuf,
    pub count: usize,
    pub seed: u64,
    pub mode: SceneMode,
    pub threads: usize,
}

pub fn run_gen_scenes(opts: &GenScenesOpts) -> Result<Manifest, PipelineError> {
    let assets = SceneAssets::new(hand_template(), &RadiusPolicy::default());
    let cfg = GenConfig {
        mode: opts.mode,
        ..GenConfig::default()
    };
    let stream = substream(opts.seed, "generation");
    let seeds: Vec<u64> = (0..opts.count).map(|i| indexed(stream, i as u64)).collect();

    let scenes: Vec<Result<Scene, SceneGenError>> =
        parallel_map(seeds.len(), opts.threads, |i| {
            generate_interaction(&assets, seeds[i], &cfg)
        });

    let mut records = Vec::with_capacity(seeds.len());
    for (i, scene) in scenes.into_iter().enumerate() {
        let scene = scene?;
        let dir_name = format!("scene_{i:04}");
        let dir = opts.out.join(&dir_name);
        save_scene(&dir, &assets, &scene)?;

        let scene_mask = read_pgm(&dir.join("mask_scene.pgm"))?;
        let mut objects = Vec::with_capacity(scene.objects.len());
        for (oi, obj) in scene.objects.iter().enumerate() {
            let id = (oi + 1) as u8;
            let solo = read_pgm(&dir.join(format!("mask_{}.pgm", obj.name)))?;
            objects.push(ManifestObject {
                name: obj.name.clone(),
                id,
                mesh: format!("{}.obj", obj.name),
                vr: visibility_ratio(&scene_mask, &solo, id).ok(),
            });
        }
        records.push(ManifestRecord {
            version: MANIFEST_VERSION,
            seed: seeds[i],
            mode: opts.mode,
            scene_dir: dir_name,
            camera: cfg.camera.clone(),
            objects,
        });
    }
    write_manifest(&opts.out.join("manifest.jsonl"), &records)?;
    Ok(Manifest {
        root: opts.out.clone(),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hierarchy_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let s = &self.split;
        if s.train < 0.0 || s.val < 0.0 || s.test < 0.0 {
            return Err(PipelineError::BadConfig {
                reason: "split fractions must be non-negative".to_string(),
            });
        }
        if (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return Err(PipelineError::BadConfig {
                reason: format!(
                    "split fractions sum to {}, expected 1",
                    s.train + s.val + s.test
                ),
            });
        }
        if !self.hierarchy_dir.exists() {
            return Err(PipelineError::BadConfig {
                reason: format!("hierarchy dir {} not found", self.hierarchy_dir.display()),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainToyOpts {
    pub scenes: PathBuf,
    pub hierarchy: PathBuf,
    pub out: PathBuf,
    /// Experiment config file; when present it overrides the tuning flags
    /// below and the hierarchy path.
    pub config: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub image_size: usize,
    pub single_path: bool,
    pub no_attention: bool,
    pub no_augment: bool,
    /// Train both decoder variants and write a comparison table.
    pub ablation: bool,
}

impl Default for TrainToyOpts {
    fn default() -> Self {
        TrainToyOpts {
            scenes: PathBuf::from("scenes/manifest.jsonl"),
            hierarchy: PathBuf::from("hierarchy"),
            out: PathBuf::from("run"),
            config: None,
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            image_size: 16,
            single_path: false,
            no_attention: false,
            no_augment: false,
            ablation: false,
        }
    }
}

fn default_channels(levels: usize) -> Vec<usize> {
    if levels == 5 {
        vec![16, 32, 32, 64, 64]
    } else {
        (0..levels).map(|i| (8usize << i).min(64)).collect()
    }
}

fn flag_config(opts: &TrainToyOpts, levels: usize) -> (ModelConfig, TrainConfig, SplitConfig) {
    let channels = default_channels(levels);
    let ff_hidden = 2 * channels.last().copied().unwrap_or(8);
    let model = ModelConfig {
        image_size: opts.image_size,
        encoder_channels: if opts.image_size <= 32 { [4, 8] } else { [8, 16] },
        channels,
        spiral_lengths: None,
        heads: 4,
        ff_hidden,
        attention: !opts.no_attention,
        single_path: opts.single_path,
        blocks_per_stage: 1,
    };
    let train = TrainConfig {
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        base_lr: opts.lr,
        seed: substream(opts.seed, "augmentation"),
        augment: !opts.no_augment,
        ..TrainConfig::default()
    };
    (model, train, SplitConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: String,
    pub param_count: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub val_loss: Option<f64>,
    pub epochs: usize,
}

fn mean_l1_rows(model: &MeshDecoder, items: &[crate::model::TrainItem]) -> Result<f64, PipelineError> {
    let mut total = 0.0;
    for item in items {
        let pred = model.predict(&normalize_image(&item.image))?;
        let rows = item.target.shape()[0] as f64;
        let l1: f64 = pred
            .values()
            .iter()
            .zip(item.target.values())
            .map(|(p, t)| (p - t).abs())
            .sum();
        total += l1 / rows;
    }
    Ok(total / items.len() as f64)
}

fn train_variant(
    name: &str,
    model_cfg: &ModelConfig,
    hierarchy: &MeshHierarchy,
    items: &[crate::model::TrainItem],
    val_items: &[crate::model::TrainItem],
    train_cfg: &TrainConfig,
    init_seed: u64,
    out: &Path,
) -> Result<(TrainSummary, Vec<EpochLog>), PipelineError> {
    std::fs::create_dir_all(out)?;
    let mut model = MeshDecoder::new(model_cfg.clone(), hierarchy, init_seed)?;
    let mut csv = String::from("epoch,lr,loss\n");
    let logs = train(&mut model, items, train_cfg, |log| {
        csv.push_str(&format!("{},{},{}\n", log.epoch, log.lr, log.loss));
    })?;
    atomic_write(&out.join("train_log.csv"), csv.as_bytes())?;
    model.save(&out.join("model.json"))?;
    atomic_write(
        &out.join("model_config.json"),
        serde_json::to_string_pretty(model_cfg)?.as_bytes(),
    )?;
    let val_loss = if val_items.is_empty() {
        None
    } else {
        Some(mean_l1_rows(&model, val_items)?)
    };
    let summary = TrainSummary {
        variant: name.to_string(),
        param_count: model.param_count(),
        first_loss: logs.first().map(|l| l.loss).unwrap_or(f64::NAN),
        final_loss: logs.last().map(|l| l.loss).unwrap_or(f64::NAN),
        val_loss,
        epochs: logs.len(),
    };
    atomic_write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok((summary, logs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitIndices {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn split_indices(n: usize, split: &SplitConfig, seed: u64) -> SplitIndices {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((n as f64 * split.train).round() as usize).min(n);
    let n_val = ((n as f64 * split.val).round() as usize).min(n - n_train);
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    SplitIndices { train, val, test }
}

fn subset(manifest: &Manifest, indices: &[usize]) -> Manifest {
    Manifest {
        root: manifest.root.clone(),
        records: indices.iter().map(|&i| manifest.records[i].clone()).collect(),
    }
}

/// Trains the mesh decoder on generated scenes. Returns one summary per
/// trained variant (two in ablation mode).
pub fn run_train_toy(opts: &TrainToyOpts) -> Result<Vec<TrainSummary>, PipelineError> {
    let (hier_dir, explicit) = match &opts.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            (cfg.hierarchy_dir.clone(), Some(cfg))
        }
        None => (opts.hierarchy.clone(), None),
    };
    let hierarchy = MeshHierarchy::load(&hier_dir)?;
    let pre = PreDecimation::load(&hier_dir)?;
    let (model_cfg, train_cfg, split, master_seed) = match explicit {
        Some(cfg) => (cfg.model, cfg.train, cfg.split, cfg.seed),
        None => {
            let (m, t, s) = flag_config(opts, hierarchy.level_count());
            (m, t, s, opts.seed)
        }
    };

    let manifest = load_manifest(&opts.scenes)?;
    let indices = split_indices(manifest.len(), &split, substream(master_seed, "split"));
    std::fs::create_dir_all(&opts.out)?;
    atomic_write(
        &opts.out.join("split.json"),
        serde_json::to_string_pretty(&indices)?.as_bytes(),
    )?;

    let assets = SceneAssets::new(hand_template(), &RadiusPolicy::default());
    let train_items = load_training_set(
        &assets,
        &subset(&manifest, &indices.train),
        pre.as_ref(),
        model_cfg.image_size,
    )?;
    let val_items = load_training_set(
        &assets,
        &subset(&manifest, &indices.val),
        pre.as_ref(),
        model_cfg.image_size,
    )?;

    let init_seed = substream(master_seed, "init");
    let mut summaries = Vec::new();
    if opts.ablation {
        for (name, single) in [("multi_path", false), ("single_path", true)] {
            let cfg = ModelConfig {
                single_path: single,
                ..model_cfg.clone()
            };
            let (summary, _) = train_variant(
                name,
                &cfg,
                &hierarchy,
                &train_items,
                &val_items,
                &train_cfg,
                init_seed,
                &opts.out.join(name),
            )?;
            summaries.push(summary);
        }
        atomic_write(
            &opts.out.join("ablation.json"),
            serde_json::to_string_pretty(&summaries)?.as_bytes(),
        )?;
    } else {
        let name = if model_cfg.single_path {
            "single_path"
        } else {
            "multi_path"
        };
        let (summary, _) = train_variant(
            name,
            &model_cfg,
            &hierarchy,
            &train_items,
            &val_items,
            &train_cfg,
            init_seed,
            &opts.out,
        )?;
        summaries.push(summary);
    }
    Ok(summaries)
}

#[derive(Debug, Clone)]
pub struct PredictOpts {
    /// Directory holding model.json and model_config.json.
    pub model_dir: PathBuf,
    pub hierarchy: PathBuf,
    pub scenes: PathBuf,
    pub out: PathBuf,
    /// Also write the matching ground-truth meshes here.
    pub gt_out: Option<PathBuf>,
}

pub fn run_predict(opts: &PredictOpts) -> Result<usize, PipelineError> {
    let hierarchy = MeshHierarchy::load(&opts.hierarchy)?;
    let pre = PreDecimation::load(&opts.hierarchy)?;
    let model_cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(
        opts.model_dir.join("model_config.json"),
    )?)?;
    let mut model = MeshDecoder::new(model_cfg, &hierarchy, 0)?;
    model.load(&opts.model_dir.join("model.json"))?;

    let manifest = load_manifest(&opts.scenes)?;
    let assets = SceneAssets::new(hand_template(), &RadiusPolicy::default());
    let faces = hierarchy.levels[0].mesh.faces().to_vec();
    std::fs::create_dir_all(&opts.out)?;
    if let Some(gt) = &opts.gt_out {
        std::fs::create_dir_all(gt)?;
    }
    for record in &manifest.records {
        let image = normalize_image(&scene_image(&manifest, record, model.config.image_size)?);
        let pred = model.predict(&image)?;
        let name = format!("{}.obj", record.scene_dir);
        obj::write_obj(&opts.out.join(&name), &target_mesh(&pred, &faces)?)?;
        if let Some(gt) = &opts.gt_out {
            let target = scene_target(&assets, &manifest, record, pre.as_ref())?;
            obj::write_obj(&gt.join(&name), &target_mesh(&target, &faces)?)?;
        }
    }
    Ok(manifest.len())
}

/// Predicts a mesh for one saved scene directory, without a manifest. The
/// record is rebuilt from scene.json, so the directory must be intact.
pub fn run_predict_one(
    model_dir: &Path,
    hierarchy_dir: &Path,
    scene_dir: &Path,
    out: &Path,
) -> Result<(), PipelineError> {
    let scene = crate::scenegen::load_scene(scene_dir)?;
    let dir_name = scene_dir
        .file_name()
        .ok_or_else(|| PipelineError::BadConfig {
            reason: format!("scene path {} has no directory name", scene_dir.display()),
        })?
        .to_string_lossy()
        .into_owned();
    let root = scene_dir.parent().unwrap_or(Path::new(".")).to_path_buf();
    let record = ManifestRecord {
        version: MANIFEST_VERSION,
        seed: scene.seed,
        mode: scene.mode,
        scene_dir: dir_name,
        camera: scene.camera.clone(),
        objects: scene
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| ManifestObject {
                name: o.name.clone(),
                id: (i + 1) as u8,
                mesh: format!("{}.obj", o.name),
                vr: None,
            })
            .collect(),
    };
    let manifest = Manifest {
        root,
        records: vec![record],
    };

    let hierarchy = MeshHierarchy::load(hierarchy_dir)?;
    let model_cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(
        model_dir.join("model_config.json"),
    )?)?;
    let mut model = MeshDecoder::new(model_cfg, &hierarchy, 0)?;
    model.load(&model_dir.join("model.json"))?;

    let image = normalize_image(&scene_image(
        &manifest,
        &manifest.records[0],
        model.config.image_size,
    )?);
    let pred = model.predict(&image)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    obj::write_obj(out, &target_mesh(&pred, hierarchy.levels[0].mesh.faces())?)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalOpts {
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub out: PathBuf,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub name: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub count: usize,
    pub mean_pa_mpjpe_mm: f64,
    pub mean_pa_mpvpe_mm: f64,
    pub mean_auc: f64,
    pub mean_f_scores: BTreeMap<u32, f64>,
    pub samples: Vec<SampleReport>,
}

fn sorted_objs(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "obj"))
        .collect();
    files.sort();
    Ok(files)
}

/// Scores each predicted mesh against the same-named ground-truth mesh. The
/// coarse vertex sets double as the keypoint sets.
pub fn run_eval(opts: &EvalOpts) -> Result<EvalSummary, PipelineError> {
    let pred_files = sorted_objs(&opts.pred)?;
    let gt_files = sorted_objs(&opts.gt)?;
    if pred_files.len() != gt_files.len() {
        return Err(PipelineError::CountMismatch {
            pred: pred_files.len(),
            gt: gt_files.len(),
        });
    }
    if pred_files.is_empty() {
        return Err(PipelineError::BadConfig {
            reason: format!("no .obj files under {}", opts.pred.display()),
        });
    }
    for (p, g) in pred_files.iter().zip(&gt_files) {
        if p.file_name() != g.file_name() {
            return Err(PipelineError::NameMismatch {
                pred: p.display().to_string(),
                gt: g.display().to_string(),
            });
        }
    }

    let results: Vec<Result<SampleReport, PipelineError>> =
        parallel_map(pred_files.len(), opts.threads, |i| {
            let pv = obj::read_obj(&pred_files[i])?.vertices().to_vec();
            let gv = obj::read_obj(&gt_files[i])?.vertices().to_vec();
            Ok(SampleReport {
                name: pred_files[i]
                    .file_name()
                    .expect("obj file name")
                    .to_string_lossy()
                    .into_owned(),
                report: evaluate_pair(&pv, &gv, &pv, &gv)?,
            })
        });
    let samples: Vec<SampleReport> = results.into_iter().collect::<Result<_, _>>()?;

    let n = samples.len() as f64;
    let mut mean_f_scores = BTreeMap::new();
    for s in &samples {
        for (mm, f) in &s.report.f_scores {
            *mean_f_scores.entry(*mm).or_insert(0.0) += f / n;
        }
    }
    let summary = EvalSummary {
        count: samples.len(),
        mean_pa_mpjpe_mm: samples.iter().map(|s| s.report.pa_mpjpe_mm).sum::<f64>() / n,
        mean_pa_mpvpe_mm: samples.iter().map(|s| s.report.pa_mpvpe_mm).sum::<f64>() / n,
        mean_auc: samples.iter().map(|s| s.report.auc).sum::<f64>() / n,
        mean_f_scores,
        samples,
    };
    if let Some(parent) = opts.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    atomic_write(
        &opts.out,
        serde_json::to_string_pretty(&summary)?.as_bytes(),
    )?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct VrReportOpts {
    pub manifest: PathBuf,
    pub pred: PathBuf,
    pub gt: PathBuf,
    pub out: PathBuf,
    /// Object whose visibility drives the bucketing.
    pub object: String,
}

/// Buckets per-scene scores by how visible the focus object stayed in the
/// full render. Returns the per-scene scores and the bucket rows.
pub fn run_vr_report(
    opts: &VrReportOpts,
) -> Result<(Vec<SampleScore>, Vec<BucketRow>), PipelineError> {
    let manifest = load_manifest(&opts.manifest)?;
    let mut samples = Vec::with_capacity(manifest.len());
    for (i, record) in manifest.records.iter().enumerate() {
        let entry = record
            .objects
            .iter()
            .find(|o| o.name == opts.object)
            .ok_or_else(|| PipelineError::MissingObject {
                name: opts.object.clone(),
            })?;
        let scene_mask = read_pgm(&manifest.scene_mask(record))?;
        let solo = read_pgm(&manifest.solo_mask(record, entry))?;
        let vr = visibility_ratio(&scene_mask, &solo, entry.id)?;

        let name = format!("{}.obj", record.scene_dir);
        for dir in [&opts.pred, &opts.gt] {
            if !dir.join(&name).exists() {
                return Err(PipelineError::MissingFile {
                    record: i,
                    path: dir.join(&name).display().to_string(),
                });
            }
        }
        let pv = obj::read_obj(&opts.pred.join(&name))?.vertices().to_vec();
        let gv = obj::read_obj(&opts.gt.join(&name))?.vertices().to_vec();
        let report = evaluate_pair(&pv, &gv, &pv, &gv)?;
        samples.push(SampleScore {
            vr,
            auc: report.auc,
            error_mm: report.pa_mpjpe_mm,
        });
    }
    let rows = bucket_report(&samples);
    let mut csv = String::from("lo,hi,count,mean_auc,mean_error_mm\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.lo, r.hi, r.count, r.mean_auc, r.mean_error_mm
        ));
    }
    if let Some(parent) = opts.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    atomic_write(&opts.out, csv.as_bytes())?;
    Ok((samples, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_matches_serial_in_order() {
        let serial: Vec<usize> = parallel_map(20, 1, |i| i * i);
        let parallel: Vec<usize> = parallel_map(20, 4, |i| i * i);
        assert_eq!(serial, parallel);
        assert_eq!(serial[7], 49);
        let empty: Vec<usize> = parallel_map(0, 4, |i| i);
        assert!(empty.is_empty());
    }

    #[test]
    fn split_covers_everything_once() {
        let split = SplitConfig {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        };
        let s = split_indices(10, &split, 3);
        assert_eq!(s.train.len(), 6);
        assert_eq!(s.val.len(), 2);
        assert_eq!(s.test.len(), 2);
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, &split, 3).train, s.train);
        assert_ne!(split_indices(10, &split, 4).train, s.train);
    }

    #[test]
    fn default_split_trains_on_everything() {
        let s = split_indices(5, &SplitConfig::default(), 0);
        assert_eq!(s.train, vec![0, 1, 2, 3, 4]);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn experiment_config_validation() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig {
            hierarchy_dir: tmp.path().to_path_buf(),
            model: ModelConfig {
                image_size: 8,
                encoder_channels: [4, 8],
                channels: vec![8, 16],
                spiral_lengths: None,
                heads: 4,
                ff_hidden: 16,
                attention: true,
                single_path: false,
                blocks_per_stage: 1,
            },
            train: TrainConfig::default(),
            split: SplitConfig::default(),
            seed: 1,
        };
        cfg.validate().unwrap();

        cfg.split.val = 0.5;
        assert!(matches!(
            cfg.validate(),
            Err(PipelineError::BadConfig { .. })
        ));
        cfg.split.val = 0.0;
        cfg.hierarchy_dir = tmp.path().join("missing");
        assert!(matches!(
            cfg.validate(),
            Err(PipelineError::BadConfig { .. })
        ));
    }

    #[test]
    fn channel_defaults_track_level_count() {
        assert_eq!(default_channels(5), vec![16, 32, 32, 64, 64]);
        assert_eq!(default_channels(2), vec![8, 16]);
        assert_eq!(default_channels(4), vec![8, 16, 32, 64]);
    }
}
