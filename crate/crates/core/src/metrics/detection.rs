//! Greedy IoU matching and all-points average precision for single-class
//! lesion detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoundingBox;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.40;

/// Intersection over union, exact integer areas before the final division.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionInstance {
    pub image_id: String,
    pub ground_truth: Vec<BoundingBox>,
    pub predictions: Vec<ScoredBox>,
    pub iou_threshold: f64,
}

impl DetectionInstance {
    pub fn new(image_id: impl Into<String>, ground_truth: Vec<BoundingBox>, predictions: Vec<ScoredBox>) -> Self {
        Self {
            image_id: image_id.into(),
            ground_truth,
            predictions,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

/// Outcome for one prediction, in confidence-descending order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    /// Index into the instance's prediction list.
    pub prediction: usize,
    pub confidence: f64,
    /// Matched ground-truth index, `None` for a false positive.
    pub ground_truth: Option<usize>,
    pub iou: f64,
}

/// Greedy matching: predictions by confidence (ties keep input order), each
/// taking the still-unmatched ground truth of highest IoU when that IoU
/// reaches the threshold.
pub fn match_detections(instance: &DetectionInstance) -> Result<Vec<Match>> {
    if let Some(p) = instance.predictions.iter().find(|p| !p.confidence.is_finite()) {
        return Err(Error::invalid(format!("non-finite confidence {}", p.confidence)));
    }
    let mut order: Vec<usize> = (0..instance.predictions.len()).collect();
    order.sort_by(|&a, &b| {
        instance.predictions[b]
            .confidence
            .total_cmp(&instance.predictions[a].confidence)
    });
    let mut taken = vec![false; instance.ground_truth.len()];
    let mut out = Vec::with_capacity(order.len());
    for pi in order {
        let pred = &instance.predictions[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in instance.ground_truth.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let v = iou(&pred.bbox, gt);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        let (ground_truth, iou) = match best {
            Some((gi, v)) if v >= instance.iou_threshold => {
                taken[gi] = true;
                (Some(gi), v)
            }
            Some((_, v)) => (None, v),
            None => (None, 0.0),
        };
        out.push(Match {
            prediction: pi,
            confidence: pred.confidence,
            ground_truth,
            iou,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: f64,
    /// Precision, recall and F1 at the confidence threshold maximizing F1.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub best_confidence: Option<f64>,
    /// `(confidence, recall, precision)` after each distinct confidence.
    pub curve: Vec<(f64, f64, f64)>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ground_truths: usize,
}

/// All-points AP over the precision envelope. Predictions sharing a
/// confidence enter the curve together.
pub fn average_precision(instances: &[DetectionInstance]) -> Result<ApReport> {
    let ground_truths: usize = instances.iter().map(|i| i.ground_truth.len()).sum();
    if ground_truths == 0 {
        return Err(Error::invalid("average precision needs at least one ground-truth box"));
    }
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for inst in instances {
        for m in match_detections(inst)? {
            scored.push((m.confidence, m.ground_truth.is_some()));
        }
    }
    // stable: ties keep instance then match order
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let conf = scored[i].0;
        while i < scored.len() && scored[i].0 == conf {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        curve.push((conf, tp as f64 / ground_truths as f64, tp as f64 / (tp + fp) as f64));
    }

    let mut envelope: Vec<f64> = curve.iter().map(|c| c.2).collect();
    for j in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[j] = envelope[j].max(envelope[j + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (c, p) in curve.iter().zip(&envelope) {
        ap += (c.1 - prev_recall) * p;
        prev_recall = c.1;
    }

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &(conf, r, p) in &curve {
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if best.is_none_or(|b| f1 > b.3) {
            best = Some((conf, p, r, f1));
        }
    }
    Ok(ApReport {
        ap,
        precision: best.map(|b| b.1),
        recall: best.map(|b| b.2),
        f1: best.map(|b| b.3),
        best_confidence: best.map(|b| b.0),
        curve,
        true_positives: tp,
        false_positives: fp,
        ground_truths,
    })
}
