//! Classifier seam, ROI masking and the hierarchical diagnosis pipeline.
//!
//! Any model implementing [`Classifier`] can be trained through the
//! pipeline; [`ReferenceClassifier`] is the built-in one (pooled image
//! statistics feeding a softmax layer, trained by SGD).

pub mod checkpoint;
mod features;
mod pipeline;
mod reference;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Execution;
use crate::model::{BoundingBox, ChannelImage, CompositeSet, LabelVector};

pub use features::{feature_dim, extract_features, POOL_GRID};
pub use pipeline::{
    group_by_report, predict_study, predict_study_proba, train_one_step, train_stage, train_two_stage, AugmentedSource, OneStepModel, StageTask,
    StudyPrediction, TrainingPlan, TwoStageModel, ROUTING_THRESHOLD,
};
pub use reference::{GradCheckReport, ReferenceClassifier, ReferenceFactory};

/// `channels × height × width` of a classifier's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn of<T: Copy>(img: &ChannelImage<T>) -> Self {
        let (channels, height, width) = img.shape();
        Self {
            channels,
            height,
            width,
        }
    }
}

/// A classifier input: masked pixels in `[0, 1]`, the region of interest and
/// a (possibly soft) target over the task's classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ChannelImage<f64>,
    pub roi: Option<BoundingBox>,
    pub label: LabelVector,
}

/// Training hyperparameters shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience on validation loss, in epochs.
    pub patience: usize,
    /// Dilation of the ROI box before masking, in pixels.
    pub mask_margin: u32,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            weight_decay: 0.0001,
            batch_size: 128,
            max_epochs: 300,
            patience: 10,
            mask_margin: 2,
            execution: Execution::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || self.batch_size == 0 || self.max_epochs == 0
        {
            return Err(crate::Error::Config(
                "hyperparams need learning_rate > 0, weight_decay >= 0, batch_size >= 1, max_epochs >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-epoch stream of training samples.
pub trait SampleSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `index` of `epoch`; a pure function of its arguments.
    fn sample(&self, epoch: usize, index: usize) -> Sample;

    /// True when samples do not depend on the epoch.
    fn is_static(&self) -> bool;
}

/// Fixed sample list.
#[derive(Debug, Clone, Default)]
pub struct StaticSource(pub Vec<Sample>);

impl SampleSource for StaticSource {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn sample(&self, _epoch: usize, index: usize) -> Sample {
        self.0[index].clone()
    }

    fn is_static(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    /// Full training objective after each epoch.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Serialized classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBlob {
    pub kind: String,
    pub class_names: Vec<String>,
    pub shape: InputShape,
    pub weights: Vec<f64>,
}

/// Model seam used by the pipeline.
pub trait Classifier: Send + Sync {
    fn class_names(&self) -> &[String];

    fn input_shape(&self) -> InputShape;

    fn fit(&mut self, train: &dyn SampleSource, val: &dyn SampleSource, hyper: &HyperParams) -> Result<FitReport>;

    /// Probabilities over `class_names()`; deterministic once fitted.
    fn predict_proba(&self, sample: &Sample) -> Result<LabelVector>;

    fn predict_batch(&self, samples: &[Sample], exec: Execution) -> Result<Vec<LabelVector>> {
        exec.try_map(samples, |s| self.predict_proba(s))
    }

    /// Parameters for checkpointing; classifiers that cannot be saved return an error.
    fn to_blob(&self) -> Result<ClassifierBlob> {
        Err(crate::Error::Checkpoint("classifier does not support checkpoints".into()))
    }
}

/// Builds untrained classifiers for a class set and input shape.
pub trait ClassifierFactory: Sync {
    fn create(&self, class_names: Vec<String>, shape: InputShape, seed: u64) -> Result<Box<dyn Classifier>>;
}

/// Zeroes every pixel outside `roi` dilated by `margin` (clipped to the image).
pub fn mask_roi<T: Copy + Default>(image: &ChannelImage<T>, roi: &BoundingBox, margin: u32) -> ChannelImage<T> {
    let (ch, h, w) = image.shape();
    let x0 = roi.x_min.saturating_sub(margin) as usize;
    let y0 = roi.y_min.saturating_sub(margin) as usize;
    let x1 = (roi.x_max.saturating_add(margin) as usize).min(w);
    let y1 = (roi.y_max.saturating_add(margin) as usize).min(h);
    let mut out = ChannelImage::filled(ch, h, w, T::default());
    for c in 0..ch {
        for y in y0..y1 {
            for x in x0..x1 {
                out.set(c, x, y, image.get(c, x, y));
            }
        }
    }
    out
}

/// Masks a composite to its union box (when present) and lifts it to reals.
pub fn composite_sample(c: &CompositeSet, margin: u32, label: LabelVector) -> Sample {
    let pixels = match &c.union_box {
        Some(b) => mask_roi(&c.channels, b, margin),
        None => c.channels.clone(),
    };
    Sample {
        image: pixels.to_unit(),
        roi: c.union_box,
        label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_box_mask_is_identity() {
        let img = ChannelImage::new(1, 2, 3, vec![1u8, 2, 3, 4, 5, 6]).unwrap();
        let b = BoundingBox::new(0, 0, 3, 2).unwrap();
        assert_eq!(mask_roi(&img, &b, 0), img);
        assert_eq!(mask_roi(&img, &BoundingBox::new(1, 1, 2, 2).unwrap(), 5), img);
    }

    #[test]
    fn mask_keeps_box_area() {
        let img = ChannelImage::filled(1, 4, 4, 1u8);
        let out = mask_roi(&img, &BoundingBox::new(1, 1, 3, 3).unwrap(), 0);
        assert_eq!(out.data().iter().filter(|&&v| v == 1).count(), 4);
        let img = ChannelImage::filled(4, 4, 4, 1u8);
        let out = mask_roi(&img, &BoundingBox::new(1, 1, 3, 3).unwrap(), 0);
        for c in 0..4 {
            assert_eq!(out.channel(c).iter().filter(|&&v| v == 1).count(), 4);
        }
    }
}
