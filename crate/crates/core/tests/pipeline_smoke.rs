//! End-to-end run over a small dataset: hierarchy, scenes, a short
//! training run, prediction, and both reports.

use std::path::Path;

use handmesh::pipeline::{
    load_manifest, run_build_hierarchy, run_eval, run_gen_scenes, run_predict, run_train_toy,
    run_vr_report, BuildHierarchyOpts, EvalOpts, EvalSummary, GenScenesOpts, PredictOpts,
    TrainToyOpts, VrReportOpts,
};
use handmesh::scenegen::SceneMode;

fn count_objs(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "obj")
        })
        .count()
}

#[test]
fn pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();

    let sizes = run_build_hierarchy(&BuildHierarchyOpts {
        out: root.join("hier"),
        template: None,
        levels: 2,
        spiral_length: 9,
        finest: Some(20),
    })
    .unwrap();
    assert_eq!(sizes, vec![20, 10]);
    assert!(root.join("hier").join("pre.json").exists());

    let manifest = run_gen_scenes(&GenScenesOpts {
        out: root.join("scenes"),
        count: 20,
        seed: 9,
        mode: SceneMode::HandHand,
        threads: 2,
    })
    .unwrap();
    assert_eq!(manifest.len(), 20);
    let reloaded = load_manifest(&root.join("scenes").join("manifest.jsonl")).unwrap();
    assert_eq!(reloaded.records, manifest.records);
    for record in &manifest.records {
        for object in &record.objects {
            let vr = object.vr.expect("every rendered object gets a ratio");
            assert!(vr > 0.0 && vr <= 1.0, "vr {vr}");
        }
    }

    let summaries = run_train_toy(&TrainToyOpts {
        scenes: root.join("scenes").join("manifest.jsonl"),
        hierarchy: root.join("hier"),
        out: root.join("run"),
        epochs: 3,
        seed: 4,
        ..TrainToyOpts::default()
    })
    .unwrap();
    assert_eq!(summaries.len(), 1);
    assert!(summaries[0].param_count > 0);
    assert!(summaries[0].final_loss.is_finite());
    for name in ["model.json", "model_config.json", "train_log.csv", "summary.json", "split.json"] {
        assert!(root.join("run").join(name).exists(), "missing {name}");
    }
    let log = std::fs::read_to_string(root.join("run").join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,lr,loss\n"));
    assert_eq!(log.lines().count(), 4);

    let n = run_predict(&PredictOpts {
        model_dir: root.join("run"),
        hierarchy: root.join("hier"),
        scenes: root.join("scenes").join("manifest.jsonl"),
        out: root.join("pred"),
        gt_out: Some(root.join("gt")),
    })
    .unwrap();
    assert_eq!(n, 20);
    assert_eq!(count_objs(&root.join("pred")), 20);
    assert_eq!(count_objs(&root.join("gt")), 20);

    let summary = run_eval(&EvalOpts {
        pred: root.join("pred"),
        gt: root.join("gt"),
        out: root.join("report.json"),
        threads: 2,
    })
    .unwrap();
    assert_eq!(summary.count, 20);
    assert!(summary.mean_pa_mpjpe_mm.is_finite());
    assert!(summary.mean_auc >= 0.0 && summary.mean_auc <= 1.0);
    let parsed: EvalSummary =
        serde_json::from_str(&std::fs::read_to_string(root.join("report.json")).unwrap()).unwrap();
    assert_eq!(parsed, summary);

    let (samples, rows) = run_vr_report(&VrReportOpts {
        manifest: root.join("scenes").join("manifest.jsonl"),
        pred: root.join("pred"),
        gt: root.join("gt"),
        out: root.join("vr.csv"),
        object: "hand0".to_string(),
    })
    .unwrap();
    assert_eq!(samples.len(), 20);
    assert!(!rows.is_empty());
    assert_eq!(rows.iter().map(|r| r.count).sum::<usize>(), 20);
    let csv = std::fs::read_to_string(root.join("vr.csv")).unwrap();
    assert!(csv.starts_with("lo,hi,count,mean_auc,mean_error_mm\n"));
    assert_eq!(csv.lines().count(), rows.len() + 1);
}

#[test]
fn ablation_trains_both_decoder_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    run_build_hierarchy(&BuildHierarchyOpts {
        out: root.join("hier"),
        template: None,
        levels: 2,
        spiral_length: 9,
        finest: Some(20),
    })
    .unwrap();
    run_gen_scenes(&GenScenesOpts {
        out: root.join("scenes"),
        count: 6,
        seed: 12,
        mode: SceneMode::HandHand,
        threads: 1,
    })
    .unwrap();

    let summaries = run_train_toy(&TrainToyOpts {
        scenes: root.join("scenes").join("manifest.jsonl"),
        hierarchy: root.join("hier"),
        out: root.join("run"),
        epochs: 1,
        ablation: true,
        seed: 8,
        ..TrainToyOpts::default()
    })
    .unwrap();
    assert_eq!(summaries.len(), 2);
    assert_eq!(summaries[0].variant, "multi_path");
    assert_eq!(summaries[1].variant, "single_path");
    // The per-level heads carry extra parameters.
    assert!(summaries[0].param_count > summaries[1].param_count);
    assert!(root.join("run").join("ablation.json").exists());
    for variant in ["multi_path", "single_path"] {
        assert!(root.join("run").join(variant).join("model.json").exists());
    }
}
