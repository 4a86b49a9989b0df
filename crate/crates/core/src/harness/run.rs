//! Per-seed training, evaluation and seed aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AugConfig, ExperimentConfig, Task};
use super::{threads_from_env, write_atomic};
use crate::cohort::{
    generate_phantom_cohort, load_manifest, split_by_patient, CohortManifest, Split,
};
use crate::diagnosis::checkpoint::SavedModel;
use crate::diagnosis::{
    group_by_report, predict_study_proba, train_one_step, train_stage, train_two_stage, Classifier, FitReport,
    ReferenceFactory, StageTask, TrainingPlan,
};
use crate::error::{Error, Result};
use crate::exec::{with_thread_cap, Execution};
use crate::metrics::files::{read_detection_instances, rows_to_csv, to_json_pretty, ClassificationRecord, MetricRow};
use crate::metrics::{
    auc_placements, average_precision, binary_metrics, mean_sem, multiclass_auc, roc_auc, roc_curve,
    t_confidence_interval, BinaryOutcomeSet,
};
use crate::model::{Branch, CompositeSet, LabelVector, LeafClass, Phase, SliceGrid};
use crate::pkcp::{build_composite, enumerate_cohort, ExpansionPolicy};

/// A cohort with decoded slice grids, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: CohortManifest,
    pub grids: Vec<SliceGrid>,
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let exec = config.execution;
    let data = &config.data;
    let ds = if let Some(spec) = &data.phantom {
        let cohort = generate_phantom_cohort(spec, exec)?;
        let mut manifest = cohort.manifest;
        let mut grids = cohort.grids;
        if let Some(held) = &data.held_out {
            let extra = generate_phantom_cohort(held, exec)?;
            let mut m = extra.manifest;
            m.assign_all(Split::Test);
            manifest.merge(m)?;
            grids.extend(extra.grids);
        }
        Dataset { manifest, grids }
    } else {
        let path = config.resolve(data.manifest.as_deref().ok_or_else(|| Error::Config("no data source".into()))?);
        let manifest = load_manifest(&path)?;
        let grids = manifest.load_grids(exec)?;
        Dataset { manifest, grids }
    };
    if let Some(p) = config.effective_phases().iter().find(|p| !ds.manifest.phases.contains(p)) {
        return Err(Error::Config(format!("phase {p} is not present in the cohort")));
    }
    Ok(ds)
}

/// Split assignment for one seed. Manifests that already assign train or
/// validation reports keep their assignment.
pub fn split_for_seed(config: &ExperimentConfig, manifest: &CohortManifest, seed: u64) -> Result<CohortManifest> {
    if manifest.splits.values().any(|s| matches!(s, Split::Train | Split::Val)) {
        return Ok(manifest.clone());
    }
    split_by_patient(manifest, config.data.train_fraction, config.data.split_seed.unwrap_or(seed))
}

/// Composites of the given reports. `None` builds the middle-depth slice of
/// each report only.
pub fn build_composites(
    grids: &[&SliceGrid],
    phases: &[Phase],
    policy: Option<&ExpansionPolicy>,
    exec: Execution,
) -> Result<Vec<CompositeSet>> {
    let restricted = exec.try_map(grids, |g| g.restrict(phases))?;
    match policy {
        Some(p) => enumerate_cohort(&restricted, p, exec),
        None => exec
            .try_map(&restricted, |g| {
                if let Some(v) = g.validate().first() {
                    return Err(Error::invalid(format!("report {}: {v}", g.report_id)));
                }
                let mid = g.depth_count().div_ceil(2);
                build_composite(g, &vec![mid; g.phase_count()])
            }),
    }
}

fn evaluation_policy(aug: AugConfig) -> Option<ExpansionPolicy> {
    (aug != AugConfig::SinglePhaseSingleSlice).then(ExpansionPolicy::all_majority)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub split: String,
    pub curve: String,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<MetricRow>,
    pub roc: Vec<RocPoint>,
    pub predictions: Vec<ClassificationRecord>,
    pub fit: BTreeMap<String, FitReport>,
    pub pr_curve: Vec<(f64, f64, f64)>,
}

/// Seed-aggregated metric: mean over seeds with SEM and 95% t interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub metric: String,
    pub mean: Option<f64>,
    pub sem: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub n: usize,
}

impl AggregateRow {
    pub fn as_metric_row(&self) -> MetricRow {
        MetricRow {
            metric: self.metric.clone(),
            point: self.mean,
            ci_lower: self.ci_lower,
            ci_upper: self.ci_upper,
            n: self.n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub name: String,
    pub output_dir: PathBuf,
    pub config_hash: String,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentOutcome {
    pub fn aggregate_value(&self, metric: &str) -> Option<f64> {
        self.aggregate.iter().find(|r| r.metric == metric).and_then(|r| r.mean)
    }
}

/// Point estimate with a t interval whose scale is the SEM of per-unit values.
fn unit_row(metric: String, point: Option<f64>, units: &[f64]) -> MetricRow {
    let ci = match (point, mean_sem(units)) {
        (Some(p), Some((_, sem))) => t_confidence_interval(p, sem, units.len()).ok(),
        _ => None,
    };
    MetricRow {
        metric,
        point,
        ci_lower: ci.map(|c| c.lower),
        ci_upper: ci.map(|c| c.upper),
        n: units.len(),
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Thresholded metrics and AUC of one binary task.
fn binary_rows(
    split: &str,
    prefix: &str,
    scores: Vec<f64>,
    truths: Vec<bool>,
    rows: &mut Vec<MetricRow>,
    roc: &mut Vec<RocPoint>,
) -> Result<()> {
    let o = BinaryOutcomeSet::new(scores, truths)?;
    let m = binary_metrics(&o);
    let idx = 0..o.len();
    let correct: Vec<f64> = idx.clone().map(|i| indicator(o.predicted(i) == o.truths[i])).collect();
    let recall: Vec<f64> = idx.clone().filter(|&i| o.truths[i]).map(|i| indicator(o.predicted(i))).collect();
    let spec: Vec<f64> = idx.clone().filter(|&i| !o.truths[i]).map(|i| indicator(!o.predicted(i))).collect();
    let precision: Vec<f64> = idx.filter(|&i| o.predicted(i)).map(|i| indicator(o.truths[i])).collect();
    let name = |m: &str| format!("{split}/{prefix}{m}");
    rows.push(unit_row(name("accuracy"), m.accuracy, &correct));
    rows.push(unit_row(name("precision"), m.precision, &precision));
    rows.push(unit_row(name("recall"), m.recall, &recall));
    rows.push(unit_row(name("specificity"), m.specificity, &spec));
    rows.push(MetricRow::point_only(name("f1"), m.f1, o.len()));
    match (roc_auc(&o), auc_placements(&o)) {
        (Ok(auc), Ok(pl)) => {
            rows.push(unit_row(name("auc"), Some(auc), &pl));
            let curve = if prefix.is_empty() { "roc" } else { prefix.trim_end_matches('_') };
            for (fpr, tpr) in roc_curve(&o)? {
                roc.push(RocPoint {
                    split: split.into(),
                    curve: curve.into(),
                    fpr,
                    tpr,
                });
            }
        }
        _ => rows.push(MetricRow::point_only(name("auc"), None, o.len())),
    }
    Ok(())
}

/// Final-class accuracy, per-class recall and one-vs-rest AUCs over the four leaves.
fn leaf_rows(split: &str, probs: &[Vec<f64>], truths: &[LeafClass], predicted: &[LeafClass], rows: &mut Vec<MetricRow>) -> Result<()> {
    let correct: Vec<f64> = truths.iter().zip(predicted).map(|(t, p)| indicator(t == p)).collect();
    let acc = (!correct.is_empty()).then(|| correct.iter().sum::<f64>() / correct.len() as f64);
    rows.push(unit_row(format!("{split}/final_accuracy"), acc, &correct));
    for leaf in LeafClass::ALL {
        let units: Vec<f64> = truths
            .iter()
            .zip(predicted)
            .filter(|(t, _)| **t == leaf)
            .map(|(_, p)| indicator(*p == leaf))
            .collect();
        let point = (!units.is_empty()).then(|| units.iter().sum::<f64>() / units.len() as f64);
        rows.push(unit_row(format!("{split}/recall_{leaf}"), point, &units));
    }
    let idx: Vec<usize> = truths.iter().map(|t| t.index()).collect();
    let auc = multiclass_auc(probs, &idx, LeafClass::ALL.len())?;
    for (leaf, a) in LeafClass::ALL.iter().zip(&auc.per_class) {
        rows.push(MetricRow::point_only(format!("{split}/auc_{leaf}"), *a, truths.len()));
    }
    rows.push(MetricRow::point_only(format!("{split}/macro_auc"), auc.macro_avg, truths.len()));
    rows.push(MetricRow::point_only(format!("{split}/weighted_auc"), auc.weighted_avg, truths.len()));
    Ok(())
}

fn record(report_id: &str, task: &str, names: &[String], probs: &LabelVector, truth: &str) -> ClassificationRecord {
    ClassificationRecord {
        report_id: report_id.into(),
        task: task.into(),
        probs: names.iter().cloned().zip(probs.as_slice().iter().copied()).collect(),
        truth: truth.into(),
    }
}

fn leaf_names() -> Vec<String> {
    LeafClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

fn branch_names() -> Vec<String> {
    vec![Branch::Benign.name().into(), Branch::Malignant.name().into()]
}

/// Classification records of a trained model over evaluation composites.
pub fn predict_records(model: &SavedModel, composites: &[CompositeSet], exec: Execution) -> Result<Vec<ClassificationRecord>> {
    let mut out = Vec::new();
    match model {
        SavedModel::TwoStage(m) => {
            for p in m.predict_cohort(composites, exec)? {
                let leaf = class_of(composites, &p.report_id);
                out.push(record(&p.report_id, "benign_vs_malignant", &branch_names(), &p.stage1, leaf.branch().name()));
                out.push(record(&p.report_id, "two_step", &leaf_names(), &p.composed, leaf.name()));
            }
        }
        SavedModel::OneStep(m) => {
            for (id, p) in m.predict_cohort(composites, exec)? {
                let leaf = class_of(composites, &id);
                out.push(record(&id, "one_step", &leaf_names(), &p, leaf.name()));
            }
        }
    }
    Ok(out)
}

fn class_of(composites: &[CompositeSet], report_id: &str) -> LeafClass {
    composites
        .iter()
        .find(|c| c.report_id == report_id)
        .map(|c| c.class_label)
        .expect("prediction for a known report")
}

struct EvalSet {
    split: &'static str,
    composites: Vec<CompositeSet>,
}

fn evaluate_stage(
    clf: &dyn Classifier,
    task: StageTask,
    margin: u32,
    sets: &[EvalSet],
    exec: Execution,
    out: &mut SeedResult,
) -> Result<()> {
    let names = task.class_names();
    for set in sets {
        let (mut scores, mut truths) = (Vec::new(), Vec::new());
        for (id, group) in group_by_report(&set.composites) {
            let leaf = group[0].class_label;
            if !task.includes(leaf) {
                continue;
            }
            let p = predict_study_proba(clf, &group, margin, exec)?;
            let t = task.class_index(leaf);
            scores.push(p.as_slice()[1]);
            truths.push(t == 1);
            out.predictions.push(record(id, task.name(), &names, &p, &names[t]));
        }
        binary_rows(set.split, "", scores, truths, &mut out.rows, &mut out.roc)?;
    }
    Ok(())
}

fn run_classification(config: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<SeedResult> {
    let exec = config.execution;
    let manifest = split_for_seed(config, &ds.manifest, seed)?;
    let mut by_split: BTreeMap<Split, Vec<&SliceGrid>> = BTreeMap::new();
    for g in &ds.grids {
        if let Some(s) = manifest.split_of(&g.report_id) {
            by_split.entry(s).or_default().push(g);
        }
    }
    let grids_of = |s: Split| by_split.get(&s).cloned().unwrap_or_default();
    let phases = config.effective_phases();
    let policy = config.aug.training_policy();
    let train = build_composites(&grids_of(Split::Train), &phases, policy.as_ref(), exec)?;
    let val_fit = build_composites(&grids_of(Split::Val), &phases, policy.as_ref(), exec)?;
    let eval_policy = evaluation_policy(config.aug);
    let mut sets = Vec::new();
    for (split, name) in [(Split::Val, "val"), (Split::Test, "test")] {
        let grids = grids_of(split);
        if !grids.is_empty() {
            sets.push(EvalSet {
                split: name,
                composites: build_composites(&grids, &phases, eval_policy.as_ref(), exec)?,
            });
        }
    }
    let hyper = crate::diagnosis::HyperParams {
        execution: exec,
        ..config.hyperparams.clone()
    };
    let margin = hyper.mask_margin;
    let plan = TrainingPlan {
        train: &train,
        val: &val_fit,
        hyper,
        mixup: (config.aug == AugConfig::PkcpMixup).then(|| config.mixup.clone()),
        traditional: (config.aug == AugConfig::PkcpTraditionalAug).then(|| config.traditional.clone()),
        seed,
    };
    let mut out = SeedResult {
        seed,
        rows: Vec::new(),
        roc: Vec::new(),
        predictions: Vec::new(),
        fit: BTreeMap::new(),
        pr_curve: Vec::new(),
    };
    let factory = ReferenceFactory;
    match config.task {
        Task::BenignVsMalignant | Task::BenignSubtype | Task::MalignantSubtype => {
            let task = match config.task {
                Task::BenignVsMalignant => StageTask::Stage1,
                Task::BenignSubtype => StageTask::Subtype(Branch::Benign),
                _ => StageTask::Subtype(Branch::Malignant),
            };
            let (clf, fit) = train_stage(&plan, task, &factory)?;
            out.fit.insert(task.name().into(), fit);
            evaluate_stage(clf.as_ref(), task, margin, &sets, exec, &mut out)?;
        }
        Task::TwoStep => {
            let model = train_two_stage(&plan, &factory)?;
            out.fit = model.fit_reports.clone();
            for set in &sets {
                let preds = model.predict_cohort(&set.composites, exec)?;
                let truths: Vec<LeafClass> = preds.iter().map(|p| class_of(&set.composites, &p.report_id)).collect();
                binary_rows(
                    set.split,
                    "stage1_",
                    preds.iter().map(|p| p.stage1.as_slice()[1]).collect(),
                    truths.iter().map(|t| t.branch() == Branch::Malignant).collect(),
                    &mut out.rows,
                    &mut out.roc,
                )?;
                let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.composed.as_slice().to_vec()).collect();
                let finals: Vec<LeafClass> = preds.iter().map(|p| p.final_class).collect();
                leaf_rows(set.split, &probs, &truths, &finals, &mut out.rows)?;
                for (p, t) in preds.iter().zip(&truths) {
                    out.predictions.push(record(&p.report_id, "two_step", &leaf_names(), &p.composed, t.name()));
                }
            }
        }
        Task::OneStep => {
            let model = train_one_step(&plan, &factory)?;
            if let Some(f) = &model.fit_report {
                out.fit.insert(StageTask::OneStep.name().into(), f.clone());
            }
            for set in &sets {
                let preds = model.predict_cohort(&set.composites, exec)?;
                let truths: Vec<LeafClass> = preds.iter().map(|(id, _)| class_of(&set.composites, id)).collect();
                let probs: Vec<Vec<f64>> = preds.iter().map(|(_, p)| p.as_slice().to_vec()).collect();
                let finals: Vec<LeafClass> = preds.iter().map(|(_, p)| LeafClass::ALL[p.argmax()]).collect();
                leaf_rows(set.split, &probs, &truths, &finals, &mut out.rows)?;
                for ((id, p), t) in preds.iter().zip(&truths) {
                    out.predictions.push(record(id, "one_step", &leaf_names(), p, t.name()));
                }
            }
        }
        Task::DetectionEval => unreachable!("detection runs without a cohort"),
    }
    Ok(out)
}

fn run_detection(config: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let path = config.resolve(config.detection.predictions.as_deref().expect("validated"));
    let instances = read_detection_instances(&path, Some(config.detection.iou_threshold))?;
    let r = average_precision(&instances)?;
    let n = r.ground_truths;
    Ok(SeedResult {
        seed,
        rows: vec![
            MetricRow::point_only("detection/ap", Some(r.ap), n),
            MetricRow::point_only("detection/precision", r.precision, n),
            MetricRow::point_only("detection/recall", r.recall, n),
            MetricRow::point_only("detection/f1", r.f1, n),
            MetricRow::point_only("detection/best_confidence", r.best_confidence, n),
        ],
        roc: Vec::new(),
        predictions: Vec::new(),
        fit: BTreeMap::new(),
        pr_curve: r.curve,
    })
}

/// Mean, SEM and t interval (df = seeds − 1) of each metric's per-seed points.
pub fn aggregate_seeds(seeds: &[SeedResult]) -> Vec<AggregateRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in seeds {
        for r in &s.rows {
            let v = values.entry(&r.metric).or_insert_with(|| {
                order.push(&r.metric);
                Vec::new()
            });
            if let Some(p) = r.point {
                v.push(p);
            }
        }
    }
    order
        .into_iter()
        .map(|m| {
            let v = &values[m];
            let ms = mean_sem(v);
            let ci = ms.and_then(|(mean, sem)| t_confidence_interval(mean, sem, v.len()).ok());
            AggregateRow {
                metric: m.to_string(),
                mean: ms.map(|x| x.0),
                sem: ms.filter(|_| v.len() >= 2).map(|x| x.1),
                ci_lower: ci.map(|c| c.lower),
                ci_upper: ci.map(|c| c.upper),
                n: v.len(),
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("metric,mean,sem,ci_lower,ci_upper,n\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.metric,
            fmt_opt(r.mean),
            fmt_opt(r.sem),
            fmt_opt(r.ci_lower),
            fmt_opt(r.ci_upper),
            r.n
        );
    }
    out
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("split,curve,fpr,tpr\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", p.split, p.curve, p.fpr, p.tpr);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub files: Vec<ArtifactEntry>,
}

pub const SEED_METRICS_FILE: &str = "metrics.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const ARTIFACTS_FILE: &str = "artifacts.json";

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed_{seed}")
}

struct ArtifactWriter<'a> {
    root: &'a Path,
    files: Vec<ArtifactEntry>,
}

impl ArtifactWriter<'_> {
    fn put(&mut self, rel: String, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.root.join(&rel), bytes)?;
        self.files.push(ArtifactEntry {
            path: rel,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }
}

fn write_outputs(config: &ExperimentConfig, hash: &str, seeds: &[SeedResult], aggregate: &[AggregateRow]) -> Result<PathBuf> {
    let root = config.output_path();
    let mut w = ArtifactWriter {
        root: &root,
        files: Vec::new(),
    };
    w.put("config.toml".into(), config.normalized().to_toml()?.as_bytes())?;
    for s in seeds {
        let dir = seed_dir_name(s.seed);
        let rows: Vec<(Option<&str>, &MetricRow)> = s.rows.iter().map(|r| (None, r)).collect();
        w.put(format!("{dir}/{SEED_METRICS_FILE}"), to_json_pretty(&s.rows)?.as_bytes())?;
        w.put(format!("{dir}/metrics.csv"), rows_to_csv(&rows).as_bytes())?;
        if config.task == Task::DetectionEval {
            let mut csv = String::from("confidence,recall,precision\n");
            for (c, r, p) in &s.pr_curve {
                let _ = writeln!(csv, "{c},{r},{p}");
            }
            w.put(format!("{dir}/pr_curve.csv"), csv.as_bytes())?;
        } else {
            w.put(format!("{dir}/roc.csv"), roc_csv(&s.roc).as_bytes())?;
            w.put(format!("{dir}/predictions.json"), to_json_pretty(&s.predictions)?.as_bytes())?;
            w.put(format!("{dir}/training.json"), to_json_pretty(&s.fit)?.as_bytes())?;
        }
    }
    w.put(AGGREGATE_FILE.into(), to_json_pretty(&aggregate)?.as_bytes())?;
    w.put("aggregate.csv".into(), aggregate_csv(aggregate).as_bytes())?;
    let manifest = ArtifactManifest {
        name: config.name.clone(),
        config_hash: hash.into(),
        seeds: config.seeds.clone(),
        files: w.files,
    };
    write_atomic(&root.join(ARTIFACTS_FILE), to_json_pretty(&manifest)?.as_bytes())?;
    Ok(root)
}

/// Runs every seed of an experiment and writes its reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let threads = threads_from_env()?;
    run_inner(config, threads).map_err(|e| e.in_experiment(&config.name))
}

fn run_inner(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutcome> {
    config.validate()?;
    let hash = config.hash()?;
    let exec = config.execution;
    let seeds = with_thread_cap(threads, || -> Result<Vec<SeedResult>> {
        if config.task == Task::DetectionEval {
            return config.seeds.iter().map(|&s| run_detection(config, s)).collect();
        }
        let ds = load_dataset(config)?;
        exec.try_map(&config.seeds, |&s| run_classification(config, &ds, s))
    })?;
    let aggregate = aggregate_seeds(&seeds);
    let output_dir = write_outputs(config, &hash, &seeds, &aggregate)?;
    Ok(ExperimentOutcome {
        name: config.name.clone(),
        output_dir,
        config_hash: hash,
        seeds,
        aggregate,
    })
}

/// Trains the checkpointable model (one-step or two-step) of a config on its first seed.
pub fn train_model(config: &ExperimentConfig) -> Result<SavedModel> {
    config.validate()?;
    let seed = config.seeds[0];
    let ds = load_dataset(config)?;
    let exec = config.execution;
    let manifest = split_for_seed(config, &ds.manifest, seed)?;
    let pick = |s: Split| -> Vec<&SliceGrid> {
        ds.grids.iter().filter(|g| manifest.split_of(&g.report_id) == Some(s)).collect()
    };
    let phases = config.effective_phases();
    let policy = config.aug.training_policy();
    let train = build_composites(&pick(Split::Train), &phases, policy.as_ref(), exec)?;
    let val = build_composites(&pick(Split::Val), &phases, policy.as_ref(), exec)?;
    let plan = TrainingPlan {
        train: &train,
        val: &val,
        hyper: crate::diagnosis::HyperParams {
            execution: exec,
            ..config.hyperparams.clone()
        },
        mixup: (config.aug == AugConfig::PkcpMixup).then(|| config.mixup.clone()),
        traditional: (config.aug == AugConfig::PkcpTraditionalAug).then(|| config.traditional.clone()),
        seed,
    };
    match config.task {
        Task::TwoStep => Ok(SavedModel::TwoStage(train_two_stage(&plan, &ReferenceFactory)?)),
        Task::OneStep => Ok(SavedModel::OneStep(train_one_step(&plan, &ReferenceFactory)?)),
        other => Err(Error::Config(format!(
            "task {} does not produce a checkpointable model; use one_step or two_step",
            other.name()
        ))),
    }
    .map_err(|e| e.in_experiment(&config.name))
}

/// Evaluation composites of every report in a manifest, restricted to `phases`.
pub fn manifest_composites(manifest: &CohortManifest, phases: &[Phase], exec: Execution) -> Result<Vec<CompositeSet>> {
    let grids = manifest.load_grids(exec)?;
    let refs: Vec<&SliceGrid> = grids.iter().collect();
    build_composites(&refs, phases, Some(&ExpansionPolicy::all_majority()), exec)
}
