use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pkcp_core::cohort::{write_phantom_cohort, PhantomSpec, MANIFEST_FILE};
use pkcp_core::diagnosis::checkpoint::{self, SavedModel};
use pkcp_core::diagnosis::HyperParams;
use pkcp_core::harness::{
    load_config, manifest_composites, predict_records, report, run_experiment, seed_dir_name, train_model,
    AggregateRow, ArtifactManifest, AugConfig, ExperimentConfig, ReportFormat, Task, AGGREGATE_FILE, ARTIFACTS_FILE,
    SEED_METRICS_FILE,
};
use pkcp_core::metrics::files::{read_json, MetricRow};
use pkcp_core::model::Phase;
use pkcp_core::Execution;

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        name: "small".into(),
        task: Task::TwoStep,
        aug: AugConfig::PkcpNoAug,
        seeds: vec![1, 2, 3],
        output_dir: out.to_path_buf(),
        hyperparams: HyperParams {
            learning_rate: 0.05,
            batch_size: 32,
            max_epochs: 40,
            ..HyperParams::default()
        },
        ..ExperimentConfig::default()
    };
    c.data.phantom = Some(PhantomSpec {
        noise_sigma: 2.0,
        ..PhantomSpec::with_counts([6, 6, 6, 6])
    });
    c
}

#[test]
fn aggregate_matches_recomputation_from_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config(dir.path());
    run_experiment(&c).unwrap();

    let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in &c.seeds {
        let rows: Vec<MetricRow> = read_json(&dir.path().join(seed_dir_name(*s)).join(SEED_METRICS_FILE)).unwrap();
        for r in rows {
            if let Some(p) = r.point {
                per_metric.entry(r.metric).or_default().push(p);
            }
        }
    }
    let aggregate: Vec<AggregateRow> = read_json(&dir.path().join(AGGREGATE_FILE)).unwrap();
    assert!(!aggregate.is_empty());
    for row in &aggregate {
        let v = per_metric.get(&row.metric).cloned().unwrap_or_default();
        assert_eq!(row.n, v.len(), "{}", row.metric);
        if v.is_empty() {
            assert_eq!(row.mean, None);
            continue;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        assert!((row.mean.unwrap() - mean).abs() < 1e-12, "{}", row.metric);
        if v.len() >= 2 {
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((row.sem.unwrap() - sd / n.sqrt()).abs() < 1e-12, "{}", row.metric);
        }
    }
}

#[test]
fn artifact_digests_match_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.seeds = vec![4];
    run_experiment(&c).unwrap();
    let art: ArtifactManifest = read_json(&dir.path().join(ARTIFACTS_FILE)).unwrap();
    assert_eq!(art.config_hash, c.hash().unwrap());
    for f in &art.files {
        let bytes = fs::read(dir.path().join(&f.path)).unwrap();
        use sha2::Digest;
        assert_eq!(hex::encode(sha2::Sha256::digest(&bytes)), f.sha256, "{}", f.path);
    }
    for name in ["config.toml", "aggregate.csv", "seed_4/roc.csv", "seed_4/predictions.json"] {
        assert!(art.files.iter().any(|f| f.path == name), "{name}");
    }
}

#[test]
fn phase_subset_model_uses_canonical_channels() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.phases = vec![Phase::Dp, Phase::Ap];
    c.seeds = vec![2];
    let model = train_model(&c).unwrap();
    assert_eq!(model.phases(), &[Phase::Ap, Phase::Dp]);
    let SavedModel::TwoStage(m) = &model else {
        panic!("two-step config trains a two-stage model");
    };
    for clf in [&m.stage1, &m.benign, &m.malignant] {
        assert_eq!(clf.input_shape().channels, 2);
    }
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("runs"));
    c.seeds = vec![5];
    let cohort_dir = dir.path().join("cohort");
    let cohort = write_phantom_cohort(c.data.phantom.as_ref().unwrap(), &cohort_dir, Execution::Sequential).unwrap();

    let model = train_model(&c).unwrap();
    let SavedModel::TwoStage(m) = &model else {
        panic!("two-stage model expected");
    };
    let path = dir.path().join("model.bin");
    checkpoint::save(&path, &checkpoint::encode_two_stage(m).unwrap()).unwrap();
    let loaded = checkpoint::load(&path).unwrap();

    let comps = manifest_composites(&cohort.manifest, loaded.phases(), Execution::Parallel).unwrap();
    let a = predict_records(&model, &comps, Execution::Parallel).unwrap();
    let b = predict_records(&loaded, &comps, Execution::Sequential).unwrap();
    assert_eq!(a, b);
    let reports: usize = cohort.manifest.patients.iter().map(|p| p.reports.len()).sum();
    // one stage-1 record and one composed record per report
    assert_eq!(a.len(), 2 * reports);
    assert_eq!(a.iter().filter(|r| r.task == "two_step" && r.probs.len() == 4).count(), reports);
    assert_eq!(a.iter().filter(|r| r.task == "benign_vs_malignant" && r.probs.len() == 2).count(), reports);
}

#[test]
fn detection_eval_reads_a_predictions_file() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("detections.json");
    fs::write(
        &preds,
        r#"[
            {"image_id": "a", "boxes": [[0, 0, 10, 10, 0.9], [30, 30, 35, 35, 0.8]], "gt": [[0, 0, 10, 10]]},
            {"image_id": "b", "boxes": [[0, 0, 4, 10, 0.7]], "gt": [[0, 0, 10, 10]]}
        ]"#,
    )
    .unwrap();
    let text = format!(
        "name = \"det\"\ntask = \"detection_eval\"\noutput_dir = \"out\"\n\n[detection]\npredictions = \"{}\"\n",
        "detections.json"
    );
    fs::write(dir.path().join("det.toml"), text).unwrap();
    let c = load_config(dir.path().join("det.toml")).unwrap();
    let o = run_experiment(&c).unwrap();
    // TP .9, FP .8, TP .7 (IoU exactly 0.4) over 2 GT
    let ap = o.aggregate_value("detection/ap").unwrap();
    assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12, "{ap}");
    assert!(dir.path().join("out/seed_0/pr_curve.csv").exists());
}

#[test]
fn report_tabulates_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("one"));
    c.seeds = vec![1];
    run_experiment(&c).unwrap();
    c.task = Task::BenignVsMalignant;
    c.output_dir = dir.path().join("two");
    run_experiment(&c).unwrap();
    let csv = report(dir.path(), ReportFormat::Csv).unwrap();
    assert!(csv.starts_with("variant,metric,point,ci_lower,ci_upper,n"));
    assert!(csv.lines().any(|l| l.starts_with("one,val/final_accuracy,")));
    assert!(csv.lines().any(|l| l.starts_with("two,val/auc,")));
    let json: serde_json::Value = serde_json::from_str(&report(dir.path(), ReportFormat::Json).unwrap()).unwrap();
    assert!(json.as_array().unwrap().iter().all(|r| r["variant"].is_string() && r["metric"].is_string()));
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    write_phantom_cohort(
        &PhantomSpec {
            noise_sigma: 2.0,
            ..PhantomSpec::with_counts([5, 5, 5, 5])
        },
        dir.path().join("cohort"),
        Execution::Sequential,
    )
    .unwrap();
    let text = format!(
        "name = \"from_manifest\"\ntask = \"benign_vs_malignant\"\nseeds = [3]\noutput_dir = \"out\"\n\n[data]\nmanifest = \"cohort/{MANIFEST_FILE}\"\n\n[hyperparams]\nlearning_rate = 0.05\nbatch_size = 32\n"
    );
    fs::write(dir.path().join("exp.toml"), text).unwrap();
    let c = load_config(dir.path().join("exp.toml")).unwrap();
    let o = run_experiment(&c).unwrap();
    assert_eq!(o.output_dir, dir.path().join("out"));
    assert!(o.aggregate_value("val/auc").is_some());
}
