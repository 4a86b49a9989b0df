//! Classification metrics, ROC analysis, t-based confidence intervals and
//! detection matching / average precision.

pub mod detection;
pub mod files;
mod tdist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use detection::{average_precision, iou, match_detections, ApReport, DetectionInstance, Match};
pub use tdist::{regularized_incomplete_beta, student_t_cdf, student_t_quantile};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scored binary outcomes with a decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryOutcomeSet {
    pub scores: Vec<f64>,
    pub truths: Vec<bool>,
    pub threshold: f64,
}

impl BinaryOutcomeSet {
    pub fn new(scores: Vec<f64>, truths: Vec<bool>) -> Result<Self> {
        Self::with_threshold(scores, truths, DEFAULT_THRESHOLD)
    }

    pub fn with_threshold(scores: Vec<f64>, truths: Vec<bool>, threshold: f64) -> Result<Self> {
        if scores.len() != truths.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} truths",
                scores.len(),
                truths.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("non-finite score {s}")));
        }
        Ok(Self {
            scores,
            truths,
            threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn predicted(&self, i: usize) -> bool {
        self.scores[i] >= self.threshold
    }

    pub fn confusion(&self) -> Confusion {
        let mut c = Confusion::default();
        for i in 0..self.len() {
            match (self.predicted(i), self.truths[i]) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Threshold metrics; `None` marks an undefined value (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    /// Sensitivity.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn binary_metrics(outcomes: &BinaryOutcomeSet) -> BinaryMetrics {
    let c = outcomes.confusion();
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    BinaryMetrics {
        accuracy: ratio(c.tp + c.tn, outcomes.len()),
        precision,
        recall,
        f1,
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

/// Mid-ranks (1-based) with ties sharing their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn class_counts(outcomes: &BinaryOutcomeSet) -> Result<(usize, usize)> {
    let pos = outcomes.truths.iter().filter(|&&t| t).count();
    let neg = outcomes.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC undefined: need at least one positive and one negative"));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the Mann–Whitney rank statistic; ties count
/// one half.
pub fn roc_auc(outcomes: &BinaryOutcomeSet) -> Result<f64> {
    let (pos, neg) = class_counts(outcomes)?;
    let ranks = midranks(&outcomes.scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&outcomes.truths)
        .filter(|(_, &t)| t)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Per-positive placement values: the fraction of negatives each positive
/// outscores (ties one half). Their mean is the AUC.
pub fn auc_placements(outcomes: &BinaryOutcomeSet) -> Result<Vec<f64>> {
    let (pos, neg) = class_counts(outcomes)?;
    let all = midranks(&outcomes.scores);
    let pos_scores: Vec<f64> = outcomes
        .scores
        .iter()
        .zip(&outcomes.truths)
        .filter(|(_, &t)| t)
        .map(|(&s, _)| s)
        .collect();
    let within = midranks(&pos_scores);
    let mut out = Vec::with_capacity(pos);
    let mut pi = 0;
    for (i, &t) in outcomes.truths.iter().enumerate() {
        if t {
            // rank among all minus rank among positives = negatives beaten
            out.push((all[i] - within[pi]) / neg as f64);
            pi += 1;
        }
    }
    Ok(out)
}

/// ROC operating points `(fpr, tpr)` from `(0,0)` to `(1,1)`, one point per
/// distinct score threshold.
pub fn roc_curve(outcomes: &BinaryOutcomeSet) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = class_counts(outcomes)?;
    let mut order: Vec<usize> = (0..outcomes.len()).collect();
    order.sort_by(|&a, &b| outcomes.scores[b].total_cmp(&outcomes.scores[a]));
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = outcomes.scores[order[i]];
        while i < order.len() && outcomes.scores[order[i]] == s {
            if outcomes.truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassAuc {
    /// One-vs-rest AUC per class; `None` when a class lacks positives or negatives.
    pub per_class: Vec<Option<f64>>,
    pub macro_avg: Option<f64>,
    pub weighted_avg: Option<f64>,
    /// Set when some class was excluded.
    pub warning: bool,
}

/// One-vs-rest AUC over `scores[i][c]` with `truths[i]` the true class index.
pub fn multiclass_auc(scores: &[Vec<f64>], truths: &[usize], n_classes: usize) -> Result<MulticlassAuc> {
    if scores.len() != truths.len() {
        return Err(Error::Shape("scores and truths differ in length".into()));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != n_classes) {
        return Err(Error::Shape(format!("score row of length {}, expected {n_classes}", row.len())));
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let (mut sum, mut wsum, mut support_sum, mut k) = (0.0, 0.0, 0usize, 0usize);
    for c in 0..n_classes {
        let o = BinaryOutcomeSet::new(
            scores.iter().map(|r| r[c]).collect(),
            truths.iter().map(|&t| t == c).collect(),
        )?;
        let auc = roc_auc(&o).ok();
        if let Some(a) = auc {
            let support = truths.iter().filter(|&&t| t == c).count();
            sum += a;
            wsum += a * support as f64;
            support_sum += support;
            k += 1;
        }
        per_class.push(auc);
    }
    Ok(MulticlassAuc {
        warning: k < n_classes,
        macro_avg: (k > 0).then(|| sum / k as f64),
        weighted_avg: (support_sum > 0).then(|| wsum / support_sum as f64),
        per_class,
    })
}

/// Point estimate with a two-sided t interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub df: usize,
}

/// `point ± t(0.975, n-1) · sem`.
pub fn t_confidence_interval(point: f64, sem: f64, n: usize) -> Result<ConfidenceInterval> {
    if n < 2 {
        return Err(Error::invalid(format!("confidence interval needs n >= 2, got {n}")));
    }
    if !(sem >= 0.0) {
        return Err(Error::invalid(format!("standard error must be >= 0, got {sem}")));
    }
    let t = student_t_quantile(0.975, (n - 1) as f64)?;
    Ok(ConfidenceInterval {
        point,
        lower: point - t * sem,
        upper: point + t * sem,
        level: 0.95,
        df: n - 1,
    })
}

/// Mean and standard error of the mean (sample sd / sqrt n).
pub fn mean_sem(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, (var / n as f64).sqrt()))
}

/// Mean of a sample with its 95% t interval (absent for n < 2).
pub fn sample_interval(values: &[f64]) -> Option<(f64, Option<ConfidenceInterval>)> {
    let (mean, sem) = mean_sem(values)?;
    Some((mean, t_confidence_interval(mean, sem, values.len()).ok()))
}
