use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use handmesh::pipeline::{
    run_build_hierarchy, run_eval, run_gen_scenes, run_predict, run_predict_one, run_train_toy,
    run_vr_report, BuildHierarchyOpts, EvalOpts, GenScenesOpts, PredictOpts, TrainToyOpts,
    VrReportOpts, FOCUS_OBJECT,
};
use handmesh::scenegen::SceneMode;

#[derive(Parser)]
#[command(name = "handmesh", version, about = "Interacting-hand mesh toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a multi-resolution mesh hierarchy from a hand template
    BuildHierarchy(BuildHierarchyArgs),
    /// Generate interacting-hand scenes with masks and a manifest
    GenScenes(GenScenesArgs),
    /// Train the mesh decoder on generated scenes
    TrainToy(TrainToyArgs),
    /// Predict meshes from saved scenes with a trained checkpoint
    Predict(PredictArgs),
    /// Score predicted meshes against ground truth
    Eval(EvalArgs),
    /// Bucket evaluation scores by object visibility
    VrReport(VrReportArgs),
}

#[derive(Args)]
struct BuildHierarchyArgs {
    /// Template OBJ; defaults to the shipped or built-in hand
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    #[arg(long, default_value_t = 9)]
    spiral_length: usize,
    /// Decimate the template to this vertex count before building
    #[arg(long)]
    finest: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    HandHand,
    HandObject,
}

impl From<ModeArg> for SceneMode {
    fn from(m: ModeArg) -> SceneMode {
        match m {
            ModeArg::HandHand => SceneMode::HandHand,
            ModeArg::HandObject => SceneMode::HandObject,
        }
    }
}

#[derive(Args)]
struct GenScenesArgs {
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::HandHand)]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainToyArgs {
    /// Scene manifest, or the directory containing manifest.jsonl
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    hierarchy: PathBuf,
    /// Experiment config JSON; overrides the tuning flags below
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    image_size: usize,
    /// Decode only at the finest level instead of one head per level
    #[arg(long)]
    single_path: bool,
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    no_augment: bool,
    /// Train multi-path and single-path variants and write a comparison
    #[arg(long)]
    ablation: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Directory holding model.json and model_config.json
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    hierarchy: PathBuf,
    /// One saved scene directory; --out is then a single OBJ path
    #[arg(long, conflicts_with_all = ["scenes", "gt_out"])]
    image: Option<PathBuf>,
    /// Scene manifest; --out is then a directory of OBJs
    #[arg(long, required_unless_present = "image")]
    scenes: Option<PathBuf>,
    /// Also write matching ground-truth meshes here
    #[arg(long)]
    gt_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VrReportArgs {
    /// Scene manifest, or the directory containing manifest.jsonl
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Object whose visibility drives the bucketing
    #[arg(long, default_value = FOCUS_OBJECT)]
    object: String,
    #[arg(long)]
    out: PathBuf,
}

fn manifest_path(data: PathBuf) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.jsonl")
    } else {
        data
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::BuildHierarchy(a) => {
            let sizes = run_build_hierarchy(&BuildHierarchyOpts {
                out: a.out,
                template: a.mesh,
                levels: a.levels,
                spiral_length: a.spiral_length,
                finest: a.finest,
            })?;
            println!("built {} levels: {sizes:?}", sizes.len());
        }
        Command::GenScenes(a) => {
            let manifest = run_gen_scenes(&GenScenesOpts {
                out: a.out,
                count: a.count,
                seed: a.seed,
                mode: a.mode.into(),
                threads: a.threads,
            })?;
            println!("generated {} scenes under {}", manifest.len(), manifest.root.display());
        }
        Command::TrainToy(a) => {
            let summaries = run_train_toy(&TrainToyOpts {
                scenes: manifest_path(a.data),
                hierarchy: a.hierarchy,
                out: a.out,
                config: a.config,
                epochs: a.epochs,
                batch_size: a.batch_size,
                lr: a.lr,
                seed: a.seed,
                image_size: a.image_size,
                single_path: a.single_path,
                no_attention: a.no_attention,
                no_augment: a.no_augment,
                ablation: a.ablation,
            })?;
            for s in &summaries {
                println!(
                    "{}: {} params, loss {:.6} -> {:.6} over {} epochs{}",
                    s.variant,
                    s.param_count,
                    s.first_loss,
                    s.final_loss,
                    s.epochs,
                    s.val_loss
                        .map(|v| format!(", val {v:.6}"))
                        .unwrap_or_default(),
                );
            }
        }
        Command::Predict(a) => match a.image {
            Some(scene_dir) => {
                run_predict_one(&a.ckpt, &a.hierarchy, &scene_dir, &a.out)?;
                println!("wrote {}", a.out.display());
            }
            None => {
                let count = run_predict(&PredictOpts {
                    model_dir: a.ckpt,
                    hierarchy: a.hierarchy,
                    scenes: manifest_path(a.scenes.expect("clap requires --scenes")),
                    out: a.out.clone(),
                    gt_out: a.gt_out,
                })?;
                println!("wrote {count} meshes under {}", a.out.display());
            }
        },
        Command::Eval(a) => {
            let summary = run_eval(&EvalOpts {
                pred: a.pred,
                gt: a.gt,
                out: a.out.clone(),
                threads: a.threads,
            })?;
            println!(
                "{} pairs: PA-MPJPE {:.3} mm, PA-MPVPE {:.3} mm, AUC {:.3} -> {}",
                summary.count,
                summary.mean_pa_mpjpe_mm,
                summary.mean_pa_mpvpe_mm,
                summary.mean_auc,
                a.out.display(),
            );
        }
        Command::VrReport(a) => {
            let (samples, rows) = run_vr_report(&VrReportOpts {
                manifest: manifest_path(a.manifest),
                pred: a.pred,
                gt: a.gt,
                out: a.out.clone(),
                object: a.object,
            })?;
            println!(
                "{} scenes in {} buckets -> {}",
                samples.len(),
                rows.len(),
                a.out.display(),
            );
            print!("{}", handmesh::metrics::format_bucket_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
