//! Hierarchical training and study-level prediction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    composite_sample, mask_roi, Classifier, ClassifierFactory, FitReport, HyperParams, InputShape, Sample,
    SampleSource, StaticSource,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::harness::traditional::{apply_traditional_aug, TraditionalAugConfig};
use crate::mixup::{mix_images, sample_lambda, MixupConfig, PairSampler};
use crate::model::{Branch, CompositeSet, LabelVector, LeafClass, Phase};
use crate::pkcp::union_box;
use crate::rng;

/// Malignant-probability cut-off for routing to the malignant branch.
pub const ROUTING_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTask {
    /// Benign vs malignant.
    Stage1,
    /// Leaf subtypes within one branch.
    Subtype(Branch),
    /// Single softmax over all four leaves.
    OneStep,
}

impl StageTask {
    pub fn name(self) -> &'static str {
        match self {
            StageTask::Stage1 => "benign_vs_malignant",
            StageTask::Subtype(Branch::Benign) => "benign_subtype",
            StageTask::Subtype(Branch::Malignant) => "malignant_subtype",
            StageTask::OneStep => "one_step",
        }
    }

    pub fn class_names(self) -> Vec<String> {
        match self {
            StageTask::Stage1 => vec![Branch::Benign.name().into(), Branch::Malignant.name().into()],
            StageTask::Subtype(b) => b.leaves().iter().map(|c| c.name().to_string()).collect(),
            StageTask::OneStep => LeafClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        }
    }

    pub fn includes(self, class: LeafClass) -> bool {
        match self {
            StageTask::Subtype(b) => class.branch() == b,
            _ => true,
        }
    }

    /// Task class index of a leaf this task includes.
    pub fn class_index(self, class: LeafClass) -> usize {
        match self {
            StageTask::Stage1 => class.branch().index(),
            StageTask::Subtype(_) => class.index_in_branch(),
            StageTask::OneStep => class.index(),
        }
    }

    /// Projects a 4-leaf label onto this task's classes.
    pub fn project(self, leaf_label: &LabelVector) -> Result<LabelVector> {
        match self {
            StageTask::Stage1 => Ok(leaf_label.collapse_to_branches()),
            StageTask::Subtype(b) => leaf_label
                .restrict_to_branch(b)
                .ok_or_else(|| Error::invalid(format!("label has no mass on the {} branch", b.name()))),
            StageTask::OneStep => Ok(leaf_label.clone()),
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            StageTask::Stage1 => 1,
            StageTask::Subtype(Branch::Benign) => 2,
            StageTask::Subtype(Branch::Malignant) => 3,
            StageTask::OneStep => 4,
        }
    }
}

/// Inputs shared by every stage of one training run.
#[derive(Debug, Clone)]
pub struct TrainingPlan<'a> {
    pub train: &'a [CompositeSet],
    pub val: &'a [CompositeSet],
    pub hyper: HyperParams,
    /// Balanced MixUp on training composites when enabled.
    pub mixup: Option<MixupConfig>,
    pub traditional: Option<TraditionalAugConfig>,
    pub seed: u64,
}

/// Training stream for one stage. Each epoch slot draws from its own seeded
/// stream, so samples are reproducible regardless of evaluation order.
pub struct AugmentedSource<'a> {
    pool: Vec<&'a CompositeSet>,
    task: StageTask,
    margin: u32,
    mixup: Option<(MixupConfig, PairSampler)>,
    traditional: Option<TraditionalAugConfig>,
    seed: u64,
}

impl<'a> AugmentedSource<'a> {
    pub fn new(
        pool: Vec<&'a CompositeSet>,
        task: StageTask,
        margin: u32,
        mixup: Option<MixupConfig>,
        traditional: Option<TraditionalAugConfig>,
        seed: u64,
    ) -> Result<Self> {
        if let Some(first) = pool.first() {
            let shape = first.channels.shape();
            if let Some(c) = pool.iter().find(|c| c.channels.shape() != shape) {
                return Err(Error::Shape(format!(
                    "composite of report {} has shape {:?}, expected {:?}",
                    c.report_id,
                    c.channels.shape(),
                    shape
                )));
            }
        }
        for c in &pool {
            task.project(&c.label)?;
        }
        let mixup = match mixup.filter(|m| m.enabled) {
            None => None,
            Some(cfg) => {
                cfg.validate()?;
                let leaves: Vec<LeafClass> = match task {
                    StageTask::Subtype(b) => b.leaves().to_vec(),
                    _ => LeafClass::ALL.to_vec(),
                };
                let names: Vec<&str> = leaves.iter().map(|c| c.name()).collect();
                let classes: Vec<usize> = pool
                    .iter()
                    .map(|c| leaves.iter().position(|l| *l == c.class_label).unwrap_or(usize::MAX))
                    .collect();
                Some((cfg, PairSampler::new(&classes, &names)?))
            }
        };
        Ok(Self {
            pool,
            task,
            margin,
            mixup,
            traditional,
            seed,
        })
    }

    fn prepared(&self, c: &CompositeSet, rng: &mut rng::StreamRng) -> CompositeSet {
        match &self.traditional {
            Some(cfg) => apply_traditional_aug(c, cfg, rng),
            None => c.clone(),
        }
    }

    fn projected(&self, label: &LabelVector) -> LabelVector {
        self.task.project(label).expect("labels checked at construction")
    }
}

impl SampleSource for AugmentedSource<'_> {
    fn len(&self) -> usize {
        self.pool.len()
    }

    fn sample(&self, epoch: usize, index: usize) -> Sample {
        let mut r = rng::stream(self.seed, &[epoch as u64, index as u64]);
        match &self.mixup {
            None => {
                let c = self.prepared(self.pool[index], &mut r);
                composite_sample(&c, self.margin, self.projected(&c.label))
            }
            Some((cfg, sampler)) => {
                let (i, j) = sampler.sample_pair(&mut r);
                let lambda = sample_lambda(cfg, &mut r).expect("mixup config validated at construction");
                let a = self.prepared(self.pool[i], &mut r);
                let b = self.prepared(self.pool[j], &mut r);
                let masked = |c: &CompositeSet| match &c.union_box {
                    Some(bx) => mask_roi(&c.channels, bx, self.margin).to_unit(),
                    None => c.channels.to_unit(),
                };
                let (image, label) = mix_images(&masked(&a), &a.label, &masked(&b), &b.label, lambda)
                    .expect("pool shapes checked at construction");
                let roi = match (a.union_box, b.union_box) {
                    (Some(x), Some(y)) => union_box(&[x, y]).ok(),
                    _ => None,
                };
                Sample {
                    image,
                    roi,
                    label: self.projected(&label),
                }
            }
        }
    }

    fn is_static(&self) -> bool {
        self.mixup.is_none() && self.traditional.is_none()
    }
}

fn check_shapes(composites: &[CompositeSet]) -> Result<InputShape> {
    let first = composites
        .first()
        .ok_or_else(|| Error::invalid("empty training set"))?;
    let shape = InputShape::of(&first.channels);
    for c in composites {
        if InputShape::of(&c.channels) != shape || c.phases != first.phases {
            return Err(Error::Shape(format!(
                "report {} does not match the phases and shape of report {}",
                c.report_id, first.report_id
            )));
        }
    }
    Ok(shape)
}

/// Trains one stage on the composites it covers. Validation composites get
/// neither MixUp nor geometric augmentation.
pub fn train_stage(
    plan: &TrainingPlan<'_>,
    task: StageTask,
    factory: &dyn ClassifierFactory,
) -> Result<(Box<dyn Classifier>, FitReport)> {
    let shape = check_shapes(plan.train)?;
    let pool: Vec<&CompositeSet> = plan.train.iter().filter(|c| task.includes(c.class_label)).collect();
    if pool.is_empty() {
        let what = match task {
            StageTask::Subtype(b) => format!("the {} branch", b.name()),
            _ => "the task".into(),
        };
        return Err(Error::invalid(format!("no training composites in {what}")));
    }
    let mut present = vec![false; task.class_names().len()];
    for c in &pool {
        present[task.class_index(c.class_label)] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid(format!(
            "{} training set covers a single class",
            task.name()
        )));
    }
    let margin = plan.hyper.mask_margin;
    let train = AugmentedSource::new(
        pool,
        task,
        margin,
        plan.mixup.clone(),
        plan.traditional.clone(),
        rng::derive_seed(
            plan.seed,
            &[0xA5, task.stream_id(), plan.mixup.as_ref().map_or(0, |m| m.seed)],
        ),
    )?;
    let val_samples = plan
        .val
        .iter()
        .filter(|c| task.includes(c.class_label))
        .map(|c| Ok(composite_sample(c, margin, task.project(&c.label)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut clf = factory.create(
        task.class_names(),
        shape,
        rng::derive_seed(plan.seed, &[0xC1, task.stream_id()]),
    )?;
    let report = clf.fit(&train, &StaticSource(val_samples), &plan.hyper)?;
    Ok((clf, report))
}

/// Running mean of probability vectors; `n` identical inputs give exactly that input.
fn running_mean(rows: impl IntoIterator<Item = LabelVector>) -> Option<LabelVector> {
    let mut mean: Option<Vec<f64>> = None;
    for (n, row) in rows.into_iter().enumerate() {
        match &mut mean {
            None => mean = Some(row.into_vec()),
            Some(m) => {
                let k = (n + 1) as f64;
                for (a, b) in m.iter_mut().zip(row.as_slice()) {
                    *a += (b - *a) / k;
                }
            }
        }
    }
    mean.map(LabelVector::from_raw)
}

fn study_samples(composites: &[&CompositeSet], margin: u32) -> Result<Vec<Sample>> {
    let first = composites
        .first()
        .ok_or_else(|| Error::invalid("a study prediction needs at least one composite"))?;
    if let Some(c) = composites.iter().find(|c| c.report_id != first.report_id) {
        return Err(Error::invalid(format!(
            "composites from reports {} and {} cannot be averaged together",
            first.report_id, c.report_id
        )));
    }
    Ok(composites
        .iter()
        .map(|c| composite_sample(c, margin, c.label.clone()))
        .collect())
}

/// Study-level mean of a classifier's probabilities.
fn averaged(clf: &dyn Classifier, samples: &[Sample], exec: Execution) -> Result<LabelVector> {
    Ok(running_mean(clf.predict_batch(samples, exec)?).expect("non-empty study"))
}

/// Study-level probabilities of one classifier over a report's composites.
pub fn predict_study_proba(
    clf: &dyn Classifier,
    composites: &[&CompositeSet],
    mask_margin: u32,
    exec: Execution,
) -> Result<LabelVector> {
    averaged(clf, &study_samples(composites, mask_margin)?, exec)
}

/// Groups composites by report id, in id order.
pub fn group_by_report(composites: &[CompositeSet]) -> BTreeMap<&str, Vec<&CompositeSet>> {
    let mut out: BTreeMap<&str, Vec<&CompositeSet>> = BTreeMap::new();
    for c in composites {
        out.entry(c.report_id.as_str()).or_default().push(c);
    }
    out
}

pub struct TwoStageModel {
    pub phases: Vec<Phase>,
    pub stage1: Box<dyn Classifier>,
    pub benign: Box<dyn Classifier>,
    pub malignant: Box<dyn Classifier>,
    pub threshold: f64,
    pub mask_margin: u32,
    /// Fit histories keyed by stage task name; empty for loaded checkpoints.
    pub fit_reports: BTreeMap<String, FitReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyPrediction {
    pub report_id: String,
    /// (benign, malignant), averaged over the study's composites.
    pub stage1: LabelVector,
    pub branch: Branch,
    /// (HH, OBHT).
    pub stage2_benign: LabelVector,
    /// (HB, OMHT).
    pub stage2_malignant: LabelVector,
    /// (HH, OBHT, HB, OMHT): branch probability times within-branch probability.
    pub composed: LabelVector,
    pub final_class: LeafClass,
}

/// Ground-truth branch subsets train the subtype stages; every leaf class
/// needs at least one training composite.
pub fn train_two_stage(plan: &TrainingPlan<'_>, factory: &dyn ClassifierFactory) -> Result<TwoStageModel> {
    check_shapes(plan.train)?;
    for leaf in LeafClass::ALL {
        if !plan.train.iter().any(|c| c.class_label == leaf) {
            return Err(Error::invalid(format!("training set has no {leaf} composites")));
        }
    }
    let mut fit_reports = BTreeMap::new();
    let mut stage = |task: StageTask| -> Result<Box<dyn Classifier>> {
        let (clf, report) = train_stage(plan, task, factory)?;
        fit_reports.insert(task.name().to_string(), report);
        Ok(clf)
    };
    let stage1 = stage(StageTask::Stage1)?;
    let benign = stage(StageTask::Subtype(Branch::Benign))?;
    let malignant = stage(StageTask::Subtype(Branch::Malignant))?;
    Ok(TwoStageModel {
        phases: plan.train[0].phases.clone(),
        stage1,
        benign,
        malignant,
        threshold: ROUTING_THRESHOLD,
        mask_margin: plan.hyper.mask_margin,
        fit_reports,
    })
}

impl std::fmt::Debug for TwoStageModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TwoStageModel")
            .field("phases", &self.phases)
            .field("threshold", &self.threshold)
            .field("mask_margin", &self.mask_margin)
            .finish_non_exhaustive()
    }
}

impl TwoStageModel {
    pub fn predict_study(&self, composites: &[&CompositeSet], exec: Execution) -> Result<StudyPrediction> {
        let samples = study_samples(composites, self.mask_margin)?;
        let stage1 = averaged(self.stage1.as_ref(), &samples, exec)?;
        let stage2_benign = averaged(self.benign.as_ref(), &samples, exec)?;
        let stage2_malignant = averaged(self.malignant.as_ref(), &samples, exec)?;
        let (pb, pm) = (stage1.as_slice()[0], stage1.as_slice()[1]);
        let branch = if pm >= self.threshold { Branch::Malignant } else { Branch::Benign };
        let composed = LabelVector::from_raw(vec![
            pb * stage2_benign.as_slice()[0],
            pb * stage2_benign.as_slice()[1],
            pm * stage2_malignant.as_slice()[0],
            pm * stage2_malignant.as_slice()[1],
        ]);
        let routed = match branch {
            Branch::Benign => &stage2_benign,
            Branch::Malignant => &stage2_malignant,
        };
        let final_class = branch.leaves()[routed.argmax()];
        Ok(StudyPrediction {
            report_id: composites[0].report_id.clone(),
            stage1,
            branch,
            stage2_benign,
            stage2_malignant,
            composed,
            final_class,
        })
    }

    /// One prediction per report, in report-id order.
    pub fn predict_cohort(&self, composites: &[CompositeSet], exec: Execution) -> Result<Vec<StudyPrediction>> {
        group_by_report(composites)
            .values()
            .map(|group| self.predict_study(group, exec))
            .collect()
    }
}

pub fn predict_study(model: &TwoStageModel, composites: &[&CompositeSet], exec: Execution) -> Result<StudyPrediction> {
    model.predict_study(composites, exec)
}

/// Single 4-class classifier baseline.
pub struct OneStepModel {
    pub phases: Vec<Phase>,
    pub classifier: Box<dyn Classifier>,
    pub mask_margin: u32,
    pub fit_report: Option<FitReport>,
}

pub fn train_one_step(plan: &TrainingPlan<'_>, factory: &dyn ClassifierFactory) -> Result<OneStepModel> {
    let (classifier, report) = train_stage(plan, StageTask::OneStep, factory)?;
    Ok(OneStepModel {
        phases: plan.train[0].phases.clone(),
        classifier,
        mask_margin: plan.hyper.mask_margin,
        fit_report: Some(report),
    })
}

impl std::fmt::Debug for OneStepModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OneStepModel")
            .field("phases", &self.phases)
            .field("mask_margin", &self.mask_margin)
            .finish_non_exhaustive()
    }
}

impl OneStepModel {
    /// Averaged (HH, OBHT, HB, OMHT) probabilities of one report.
    pub fn predict_study(&self, composites: &[&CompositeSet], exec: Execution) -> Result<LabelVector> {
        predict_study_proba(self.classifier.as_ref(), composites, self.mask_margin, exec)
    }

    pub fn predict_cohort(&self, composites: &[CompositeSet], exec: Execution) -> Result<Vec<(String, LabelVector)>> {
        group_by_report(composites)
            .into_iter()
            .map(|(id, group)| Ok((id.to_string(), self.predict_study(&group, exec)?)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelImage;
    use proptest::prelude::*;

    /// Looks up its output by the first pixel of the sample.
    struct Table {
        names: Vec<String>,
        rows: BTreeMap<u8, Vec<f64>>,
    }

    impl Classifier for Table {
        fn class_names(&self) -> &[String] {
            &self.names
        }

        fn input_shape(&self) -> InputShape {
            InputShape {
                channels: 1,
                height: 2,
                width: 2,
            }
        }

        fn fit(&mut self, _: &dyn SampleSource, _: &dyn SampleSource, _: &HyperParams) -> Result<FitReport> {
            Ok(FitReport::default())
        }

        fn predict_proba(&self, s: &Sample) -> Result<LabelVector> {
            let key = (s.image.data()[0] * 255.0).round() as u8;
            Ok(LabelVector::from_raw(self.rows[&key].clone()))
        }
    }

    fn table(rows: &[(u8, [f64; 2])]) -> Box<dyn Classifier> {
        Box::new(Table {
            names: vec!["a".into(), "b".into()],
            rows: rows.iter().map(|(k, v)| (*k, v.to_vec())).collect(),
        })
    }

    fn composite(report: &str, key: u8, class: LeafClass) -> CompositeSet {
        CompositeSet {
            report_id: report.into(),
            patient_id: "p".into(),
            phases: vec![Phase::Ap],
            source_indices: vec![1],
            channels: ChannelImage::filled(1, 2, 2, key),
            union_box: None,
            class_label: class,
            label: LabelVector::leaf(class),
        }
    }

    fn model(stage1: &[(u8, [f64; 2])], benign: &[(u8, [f64; 2])], malignant: &[(u8, [f64; 2])]) -> TwoStageModel {
        TwoStageModel {
            phases: vec![Phase::Ap],
            stage1: table(stage1),
            benign: table(benign),
            malignant: table(malignant),
            threshold: ROUTING_THRESHOLD,
            mask_margin: 0,
            fit_reports: BTreeMap::new(),
        }
    }

    #[test]
    fn stage_labels_follow_hierarchy() {
        assert_eq!(
            StageTask::Stage1.project(&LabelVector::leaf(LeafClass::HH)).unwrap().as_slice(),
            &[1.0, 0.0]
        );
        let mixed = LabelVector::new(vec![0.3, 0.0, 0.7, 0.0]).unwrap();
        assert_eq!(StageTask::Stage1.project(&mixed).unwrap().as_slice(), &[0.3, 0.7]);
        assert!(StageTask::Subtype(Branch::Benign)
            .project(&LabelVector::leaf(LeafClass::HB))
            .is_err());
    }

    #[test]
    fn study_average_of_stage1() {
        let m = model(
            &[(1, [0.2, 0.8]), (2, [0.4, 0.6])],
            &[(1, [0.5, 0.5]), (2, [0.5, 0.5])],
            &[(1, [0.5, 0.5]), (2, [0.5, 0.5])],
        );
        let (a, b) = (composite("r", 1, LeafClass::HB), composite("r", 2, LeafClass::HB));
        let p = m.predict_study(&[&a, &b], Execution::Sequential).unwrap();
        assert!((p.stage1.as_slice()[0] - 0.3).abs() < 1e-15);
        assert!((p.stage1.as_slice()[1] - 0.7).abs() < 1e-15);
        assert_eq!(p.branch, Branch::Malignant);
    }

    #[test]
    fn composition_and_routing() {
        let m = model(&[(1, [0.1, 0.9])], &[(1, [0.6, 0.4])], &[(1, [0.75, 0.25])]);
        let c = composite("r", 1, LeafClass::HB);
        let p = m.predict_study(&[&c], Execution::Sequential).unwrap();
        assert_eq!(p.final_class, LeafClass::HB);
        let v = p.composed.as_slice();
        assert!((v[2] - 0.675).abs() < 1e-12 && (v[3] - 0.225).abs() < 1e-12);
        assert!((v[0] - 0.06).abs() < 1e-12 && (v[1] - 0.04).abs() < 1e-12);
        assert!(p.composed.is_simplex(1e-9));
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = model(&[(1, [0.5, 0.5])], &[(1, [0.9, 0.1])], &[(1, [0.2, 0.8])]);
        let p = m.predict_study(&[&composite("r", 1, LeafClass::HH)], Execution::Sequential).unwrap();
        assert_eq!(p.branch, Branch::Malignant);
        assert_eq!(p.final_class, LeafClass::OMHT);
    }

    #[test]
    fn averaging_is_idempotent() {
        let m = model(&[(7, [0.123, 0.877])], &[(7, [0.31, 0.69])], &[(7, [0.58, 0.42])]);
        let c = composite("r", 7, LeafClass::HH);
        let one = m.predict_study(&[&c], Execution::Sequential).unwrap();
        for n in [2, 3, 7, 10] {
            let copies: Vec<&CompositeSet> = std::iter::repeat_n(&c, n).collect();
            assert_eq!(m.predict_study(&copies, Execution::Parallel).unwrap(), one);
        }
    }

    #[test]
    fn mixed_reports_rejected() {
        let m = model(&[(1, [0.5, 0.5])], &[(1, [0.5, 0.5])], &[(1, [0.5, 0.5])]);
        let (a, b) = (composite("r1", 1, LeafClass::HH), composite("r2", 1, LeafClass::HH));
        assert!(m.predict_study(&[&a, &b], Execution::Sequential).is_err());
        assert!(m.predict_study(&[], Execution::Sequential).is_err());
    }

    struct TableFactory;

    impl ClassifierFactory for TableFactory {
        fn create(&self, names: Vec<String>, _: InputShape, _: u64) -> Result<Box<dyn Classifier>> {
            Ok(Box::new(Table {
                names,
                rows: BTreeMap::new(),
            }))
        }
    }

    fn plan(train: &[CompositeSet]) -> TrainingPlan<'_> {
        TrainingPlan {
            train,
            val: &[],
            hyper: HyperParams::default(),
            mixup: None,
            traditional: None,
            seed: 0,
        }
    }

    #[test]
    fn training_preconditions() {
        let train = vec![
            composite("a", 1, LeafClass::HH),
            composite("b", 1, LeafClass::OBHT),
            composite("c", 1, LeafClass::HB),
        ];
        let err = train_two_stage(&plan(&train), &TableFactory).err().unwrap().to_string();
        assert!(err.contains("OMHT"), "{err}");
        let err = train_stage(&plan(&train[..2]), StageTask::Subtype(Branch::Malignant), &TableFactory)
            .err()
            .unwrap()
            .to_string();
        assert!(err.contains("malignant branch"), "{err}");
        let single = vec![composite("a", 1, LeafClass::HH), composite("b", 1, LeafClass::HH)];
        assert!(train_one_step(&plan(&single), &TableFactory).is_err());
    }

    #[test]
    fn mixup_source_is_reproducible_and_soft() {
        let train: Vec<CompositeSet> = LeafClass::ALL
            .iter()
            .enumerate()
            .map(|(i, &c)| composite(&format!("r{i}"), 40 * i as u8, c))
            .collect();
        let pool: Vec<&CompositeSet> = train.iter().collect();
        let src = AugmentedSource::new(pool, StageTask::Stage1, 0, Some(MixupConfig::default()), None, 3).unwrap();
        assert!(!src.is_static());
        let a = src.sample(2, 1);
        assert_eq!(a, src.sample(2, 1));
        assert_eq!(a.label.len(), 2);
        assert!(a.label.is_simplex(1e-9));
        let soft = (0..50).any(|i| src.sample(i, 0).label.as_slice()[0].fract() != 0.0);
        assert!(soft);
    }

    proptest! {
        #[test]
        fn routing_consistent_and_composition_normalized(pm in 0u8..=20, pb in 0u8..=20, pmal in 0u8..=20) {
            let (pm, pb, pmal) = (pm as f64 / 20.0, pb as f64 / 20.0, pmal as f64 / 20.0);
            let m = model(&[(1, [1.0 - pm, pm])], &[(1, [pb, 1.0 - pb])], &[(1, [pmal, 1.0 - pmal])]);
            let p = m.predict_study(&[&composite("r", 1, LeafClass::HH)], Execution::Sequential).unwrap();
            prop_assert_eq!(p.final_class.branch(), p.branch);
            prop_assert_eq!(p.branch == Branch::Malignant, pm >= ROUTING_THRESHOLD);
            prop_assert!(p.composed.is_simplex(1e-9));
        }
    }
}
