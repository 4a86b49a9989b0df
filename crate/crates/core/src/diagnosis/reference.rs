//! Softmax regression over standardized global image features, trained with
//! mini-batch SGD, L2 weight decay and early stopping on validation loss.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{extract_features, feature_dim};
use super::{
    Classifier, ClassifierBlob, ClassifierFactory, FitReport, HyperParams, InputShape, Sample, SampleSource,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::LabelVector;
use crate::rng;

pub const KIND: &str = "reference";

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceClassifier {
    class_names: Vec<String>,
    shape: InputShape,
    seed: u64,
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    /// Row-major `classes × features`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceFactory;

impl ClassifierFactory for ReferenceFactory {
    fn create(&self, class_names: Vec<String>, shape: InputShape, seed: u64) -> Result<Box<dyn Classifier>> {
        Ok(Box::new(ReferenceClassifier::new(class_names, shape, seed)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

impl ReferenceClassifier {
    /// Untrained model: weights uniform in (-0.01, 0.01), zero biases,
    /// identity feature scaling.
    pub fn new(class_names: Vec<String>, shape: InputShape, seed: u64) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::invalid("a classifier needs at least two classes"));
        }
        if shape.height < super::POOL_GRID || shape.width < super::POOL_GRID || shape.channels == 0 {
            return Err(Error::Shape(format!(
                "input {}x{}x{} is too small for the feature extractor",
                shape.channels, shape.height, shape.width
            )));
        }
        let f = feature_dim(shape.channels);
        let k = class_names.len();
        let mut r = rng::stream(seed, &[0x1417]);
        let weights = (0..k * f).map(|_| r.random_range(-0.01..0.01)).collect();
        Ok(Self {
            class_names,
            shape,
            seed,
            feature_mean: vec![0.0; f],
            feature_scale: vec![1.0; f],
            weights,
            bias: vec![0.0; k],
        })
    }

    pub fn zeroed(class_names: Vec<String>, shape: InputShape) -> Result<Self> {
        let mut m = Self::new(class_names, shape, 0)?;
        m.weights.iter_mut().for_each(|w| *w = 0.0);
        Ok(m)
    }

    pub fn feature_count(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Weights followed by biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let nw = self.weights.len();
        if params.len() != nw + self.bias.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", nw + self.bias.len(), params.len())));
        }
        self.weights.copy_from_slice(&params[..nw]);
        self.bias.copy_from_slice(&params[nw..]);
        Ok(())
    }

    /// Standardized feature vector of a sample.
    pub fn features(&self, sample: &Sample) -> Result<Vec<f64>> {
        if InputShape::of(&sample.image) != self.shape {
            return Err(Error::Shape(format!(
                "sample shape {:?} does not match model input {:?}",
                sample.image.shape(),
                self.shape
            )));
        }
        let mut f = extract_features(sample);
        for ((v, m), s) in f.iter_mut().zip(&self.feature_mean).zip(&self.feature_scale) {
            *v = (*v - m) / s;
        }
        Ok(f)
    }

    fn probs(&self, params: &[f64], z: &[f64]) -> Vec<f64> {
        let f = z.len();
        let k = self.class_count();
        let (w, b) = params.split_at(k * f);
        let mut logits: Vec<f64> = (0..k)
            .map(|c| b[c] + w[c * f..(c + 1) * f].iter().zip(z).map(|(a, x)| a * x).sum::<f64>())
            .collect();
        softmax_in_place(&mut logits);
        logits
    }

    /// Mean cross-entropy (soft targets) plus `wd/2 · ||W||²`.
    pub fn objective(&self, params: &[f64], batch: &[(Vec<f64>, Vec<f64>)], weight_decay: f64) -> f64 {
        let nw = self.class_count() * self.feature_count();
        let mut ce = 0.0;
        for (z, y) in batch {
            let p = self.probs(params, z);
            ce -= y.iter().zip(&p).map(|(t, q)| if *t > 0.0 { t * q.max(1e-300).ln() } else { 0.0 }).sum::<f64>();
        }
        let reg: f64 = params[..nw].iter().map(|w| w * w).sum();
        ce / batch.len().max(1) as f64 + 0.5 * weight_decay * reg
    }

    /// Analytic gradient of [`Self::objective`].
    pub fn gradient(&self, params: &[f64], batch: &[(Vec<f64>, Vec<f64>)], weight_decay: f64) -> Vec<f64> {
        let f = self.feature_count();
        let k = self.class_count();
        let nw = k * f;
        let mut g = vec![0.0; params.len()];
        let scale = 1.0 / batch.len().max(1) as f64;
        for (z, y) in batch {
            let p = self.probs(params, z);
            for c in 0..k {
                let d = (p[c] - y[c]) * scale;
                if d != 0.0 {
                    for (gi, x) in g[c * f..(c + 1) * f].iter_mut().zip(z) {
                        *gi += d * x;
                    }
                }
                g[nw + c] += d;
            }
        }
        for (gi, w) in g[..nw].iter_mut().zip(&params[..nw]) {
            *gi += weight_decay * w;
        }
        g
    }

    /// Compares the analytic gradient with central differences (step 1e-5)
    /// on `n_params` randomly chosen parameters (all of them if fewer).
    /// Relative error is `|a - n| / max(|a|, |n|, 1e-4)`.
    pub fn grad_check(&self, batch: &[Sample], weight_decay: f64, n_params: usize, seed: u64) -> Result<GradCheckReport> {
        let data = batch
            .iter()
            .map(|s| Ok((self.features(s)?, s.label.as_slice().to_vec())))
            .collect::<Result<Vec<_>>>()?;
        let params = self.params();
        let analytic = self.gradient(&params, &data, weight_decay);
        let mut idx: Vec<usize> = (0..params.len()).collect();
        idx.shuffle(&mut rng::stream(seed, &[0x6C]));
        idx.truncate(n_params.max(1).min(params.len()));
        let h = 1e-5;
        let mut worst = 0.0f64;
        let mut p = params.clone();
        for &i in &idx {
            p[i] = params[i] + h;
            let up = self.objective(&p, &data, weight_decay);
            p[i] = params[i] - h;
            let down = self.objective(&p, &data, weight_decay);
            p[i] = params[i];
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        Ok(GradCheckReport {
            max_relative_error: worst,
            checked: idx.len(),
        })
    }

    fn labelled(&self, sample: &Sample, z: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if sample.label.len() != self.class_count() {
            return Err(Error::Shape(format!(
                "label over {} classes for a {}-class model",
                sample.label.len(),
                self.class_count()
            )));
        }
        Ok((z, sample.label.as_slice().to_vec()))
    }

    fn epoch_data(&self, source: &dyn SampleSource, epoch: usize, exec: Execution) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        exec.map_range(source.len(), |i| {
            let s = source.sample(epoch, i);
            let z = self.features(&s)?;
            self.labelled(&s, z)
        })
        .into_iter()
        .collect()
    }

    fn fit_standardization(&mut self, source: &dyn SampleSource, exec: Execution) -> Result<()> {
        let f = self.feature_count();
        self.feature_mean = vec![0.0; f];
        self.feature_scale = vec![1.0; f];
        let raw = self.epoch_data(source, 0, exec)?;
        let n = raw.len() as f64;
        let mut mean = vec![0.0; f];
        for (z, _) in &raw {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for (z, _) in &raw {
            for ((s, v), m) in var.iter_mut().zip(z).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        self.feature_scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        self.feature_mean = mean;
        Ok(())
    }

    fn cross_entropy(&self, params: &[f64], data: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        self.objective(params, data, 0.0)
    }

    fn restore(&mut self, params: &[f64]) {
        let nw = self.weights.len();
        self.weights.copy_from_slice(&params[..nw]);
        self.bias.copy_from_slice(&params[nw..]);
    }

    pub fn from_blob(blob: &ClassifierBlob) -> Result<Self> {
        if blob.kind != KIND {
            return Err(Error::Checkpoint(format!("unknown classifier kind `{}`", blob.kind)));
        }
        let mut m = Self::zeroed(blob.class_names.clone(), blob.shape)?;
        let f = m.feature_count();
        let k = m.class_count();
        let expected = 2 * f + k * f + k;
        if blob.weights.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} weights for this shape, found {}",
                blob.weights.len()
            )));
        }
        let (mean, rest) = blob.weights.split_at(f);
        let (scale, rest) = rest.split_at(f);
        let (w, b) = rest.split_at(k * f);
        m.feature_mean = mean.to_vec();
        m.feature_scale = scale.to_vec();
        m.weights = w.to_vec();
        m.bias = b.to_vec();
        Ok(m)
    }
}

impl Classifier for ReferenceClassifier {
    fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn input_shape(&self) -> InputShape {
        self.shape
    }

    fn fit(&mut self, train: &dyn SampleSource, val: &dyn SampleSource, hyper: &HyperParams) -> Result<FitReport> {
        hyper.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let exec = hyper.execution;
        self.fit_standardization(train, exec)?;
        let val_data = self.epoch_data(val, 0, exec)?;
        let static_train = if train.is_static() { Some(self.epoch_data(train, 0, exec)?) } else { None };

        let mut params = self.params();
        let mut report = FitReport::default();
        let mut best = (f64::INFINITY, params.clone(), 0usize);
        let mut since_best = 0usize;
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..hyper.max_epochs {
            let fresh;
            let data = match &static_train {
                Some(d) => d,
                None => {
                    fresh = self.epoch_data(train, epoch, exec)?;
                    &fresh
                }
            };
            order.shuffle(&mut rng::stream(self.seed, &[0x5A, epoch as u64]));
            let mut batch: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(hyper.batch_size);
            for chunk in order.chunks(hyper.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| data[i].clone()));
                let g = self.gradient(&params, &batch, hyper.weight_decay);
                for (p, gi) in params.iter_mut().zip(&g) {
                    *p -= hyper.learning_rate * gi;
                }
            }
            report.train_loss.push(self.objective(&params, data, hyper.weight_decay));
            report.epochs_run = epoch + 1;
            if val_data.is_empty() {
                best = (f64::NAN, params.clone(), epoch);
                continue;
            }
            let vl = self.cross_entropy(&params, &val_data);
            report.val_loss.push(vl);
            if vl < best.0 {
                best = (vl, params.clone(), epoch);
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= hyper.patience {
                    break;
                }
            }
        }
        self.restore(&best.1);
        report.best_epoch = best.2;
        report.best_val_loss = (!val_data.is_empty()).then_some(best.0);
        Ok(report)
    }

    fn predict_proba(&self, sample: &Sample) -> Result<LabelVector> {
        let z = self.features(sample)?;
        Ok(LabelVector::from_raw(self.probs(&self.params(), &z)))
    }

    fn to_blob(&self) -> Result<ClassifierBlob> {
        let mut weights = self.feature_mean.clone();
        weights.extend_from_slice(&self.feature_scale);
        weights.extend_from_slice(&self.weights);
        weights.extend_from_slice(&self.bias);
        Ok(ClassifierBlob {
            kind: KIND.into(),
            class_names: self.class_names.clone(),
            shape: self.shape,
            weights,
        })
    }
}
