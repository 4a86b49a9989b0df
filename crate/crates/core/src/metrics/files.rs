//! Prediction and metrics-report file formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detection::{DetectionInstance, ScoredBox, DEFAULT_IOU_THRESHOLD};
use super::{multiclass_auc, sample_interval};
use crate::error::{Error, Result};
use crate::model::BoundingBox;

/// One study-level classification prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub report_id: String,
    pub task: String,
    pub probs: BTreeMap<String, f64>,
    pub truth: String,
}

/// One image's detections (`[x1, y1, x2, y2, conf]`) and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub boxes: Vec<[f64; 5]>,
    pub gt: Vec<[u32; 4]>,
}

fn pixel(v: f64) -> Result<u32> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::invalid(format!("box coordinate {v} is not a non-negative number")));
    }
    Ok(v.round() as u32)
}

impl DetectionRecord {
    /// Real-valued predicted coordinates are rounded to the nearest pixel.
    pub fn to_instance(&self, iou_threshold: f64) -> Result<DetectionInstance> {
        let ground_truth = self
            .gt
            .iter()
            .map(|&g| BoundingBox::try_from(g))
            .collect::<Result<Vec<_>>>()?;
        let predictions = self
            .boxes
            .iter()
            .map(|b| {
                Ok(ScoredBox {
                    bbox: BoundingBox::new(pixel(b[0])?, pixel(b[1])?, pixel(b[2])?, pixel(b[3])?)?,
                    confidence: b[4],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DetectionInstance {
            image_id: self.image_id.clone(),
            ground_truth,
            predictions,
            iou_threshold,
        })
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))
}

pub fn read_detection_instances(path: &Path, iou_threshold: Option<f64>) -> Result<Vec<DetectionInstance>> {
    let records: Vec<DetectionRecord> = read_json(path)?;
    records
        .iter()
        .map(|r| r.to_instance(iou_threshold.unwrap_or(DEFAULT_IOU_THRESHOLD)))
        .collect()
}

/// One metrics-report row. Absent interval bounds mean the interval is
/// undefined (fewer than two units, or a metric with no per-unit sample).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub point: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub n: usize,
}

impl MetricRow {
    pub fn point_only(metric: impl Into<String>, point: Option<f64>, n: usize) -> Self {
        Self {
            metric: metric.into(),
            point,
            ci_lower: None,
            ci_upper: None,
            n,
        }
    }

    /// Mean of per-unit values with a 95% t interval.
    pub fn from_sample(metric: impl Into<String>, values: &[f64]) -> Self {
        let metric = metric.into();
        match sample_interval(values) {
            None => Self::point_only(metric, None, 0),
            Some((mean, ci)) => Self {
                metric,
                point: Some(mean),
                ci_lower: ci.map(|c| c.lower),
                ci_upper: ci.map(|c| c.upper),
                n: values.len(),
            },
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// `metric,point,ci_lower,ci_upper,n` CSV, optionally prefixed by a variant column.
pub fn rows_to_csv(rows: &[(Option<&str>, &MetricRow)]) -> String {
    let with_variant = rows.iter().any(|(v, _)| v.is_some());
    let mut out = String::new();
    if with_variant {
        out.push_str("variant,");
    }
    out.push_str("metric,point,ci_lower,ci_upper,n\n");
    for (variant, r) in rows {
        if with_variant {
            let _ = write!(out, "{},", variant.unwrap_or(""));
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.metric,
            fmt_opt(r.point),
            fmt_opt(r.ci_lower),
            fmt_opt(r.ci_upper),
            r.n
        );
    }
    out
}

/// Accuracy and one-vs-rest AUCs over a classification predictions file.
pub fn evaluate_classification(records: &[ClassificationRecord]) -> Result<Vec<MetricRow>> {
    let mut by_task: BTreeMap<&str, Vec<&ClassificationRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(&r.task).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (task, recs) in by_task {
        let classes: Vec<&String> = recs[0].probs.keys().collect();
        let mut scores = Vec::with_capacity(recs.len());
        let mut truths = Vec::with_capacity(recs.len());
        let mut correct = Vec::with_capacity(recs.len());
        for r in &recs {
            let row: Vec<f64> = classes
                .iter()
                .map(|c| {
                    r.probs.get(*c).copied().ok_or_else(|| {
                        Error::invalid(format!("report {}: missing probability for `{c}`", r.report_id))
                    })
                })
                .collect::<Result<_>>()?;
            let t = classes
                .iter()
                .position(|c| **c == r.truth)
                .ok_or_else(|| Error::invalid(format!("report {}: unknown truth `{}`", r.report_id, r.truth)))?;
            let arg = crate::model::LabelVector::from_raw(row.clone()).argmax();
            correct.push(if arg == t { 1.0 } else { 0.0 });
            scores.push(row);
            truths.push(t);
        }
        rows.push(MetricRow::from_sample(format!("{task}/accuracy"), &correct));
        let auc = multiclass_auc(&scores, &truths, classes.len())?;
        for (c, a) in classes.iter().zip(&auc.per_class) {
            rows.push(MetricRow::point_only(format!("{task}/auc_{c}"), *a, recs.len()));
        }
        rows.push(MetricRow::point_only(format!("{task}/macro_auc"), auc.macro_avg, recs.len()));
        rows.push(MetricRow::point_only(format!("{task}/weighted_auc"), auc.weighted_avg, recs.len()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detection_record_parses() {
        let text = r#"[{"image_id":"a","boxes":[[0,0,10,10,0.9],[20.4,20,30,30.6,0.2]],"gt":[[0,0,10,10]]}]"#;
        let recs: Vec<DetectionRecord> = serde_json::from_str(text).unwrap();
        let inst = recs[0].to_instance(0.4).unwrap();
        assert_eq!(inst.predictions[1].bbox.as_array(), [20, 20, 30, 31]);
        assert_eq!(inst.ground_truth.len(), 1);
    }

    #[test]
    fn csv_layout() {
        let r = MetricRow::from_sample("acc", &[1.0, 0.0, 1.0, 1.0]);
        let csv = rows_to_csv(&[(None, &r)]);
        assert!(csv.starts_with("metric,point,ci_lower,ci_upper,n\nacc,0.75,"));
        let csv = rows_to_csv(&[(Some("AVD"), &r)]);
        assert!(csv.starts_with("variant,metric"));
    }

    #[test]
    fn classification_file_metrics() {
        let rec = |id: &str, p: f64, truth: &str| ClassificationRecord {
            report_id: id.into(),
            task: "t".into(),
            probs: [("benign".to_string(), 1.0 - p), ("malignant".to_string(), p)].into(),
            truth: truth.into(),
        };
        let rows = evaluate_classification(&[
            rec("a", 0.9, "malignant"),
            rec("b", 0.2, "benign"),
            rec("c", 0.6, "benign"),
        ])
        .unwrap();
        assert_eq!(rows[0].point, Some(2.0 / 3.0));
        assert_eq!(rows.iter().find(|r| r.metric == "t/macro_auc").unwrap().point, Some(1.0));
    }
}
