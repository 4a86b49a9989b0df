//! Versioned little-endian model checkpoints.
//!
//! Layout: magic `PKCPMDL\0`, `u32` schema version, `u32` model kind
//! (1 one-step, 2 two-stage), `u32` phase count and one `u8` per phase,
//! `u32` mask margin, `f64` routing threshold, `u32` classifier count, then
//! each classifier as: kind string, `u32` class count and class-name strings,
//! three `u64` (channels, height, width), `u64` weight count and the weights
//! as `f64`. Strings are a `u32` byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::path::Path;

use super::reference::{ReferenceClassifier, KIND as REFERENCE_KIND};
use super::{Classifier, ClassifierBlob, InputShape, OneStepModel, TwoStageModel};
use crate::error::{Error, Result};
use crate::model::Phase;

pub const MAGIC: &[u8; 8] = b"PKCPMDL\0";
pub const SCHEMA_VERSION: u32 = 1;

const KIND_ONE_STEP: u32 = 1;
const KIND_TWO_STAGE: u32 = 2;

#[derive(Debug)]
pub enum SavedModel {
    OneStep(OneStepModel),
    TwoStage(TwoStageModel),
}

impl SavedModel {
    pub fn phases(&self) -> &[Phase] {
        match self {
            SavedModel::OneStep(m) => &m.phases,
            SavedModel::TwoStage(m) => &m.phases,
        }
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }

    fn blob(&mut self, b: &ClassifierBlob) {
        self.str(&b.kind);
        self.u32(b.class_names.len() as u32);
        for n in &b.class_names {
            self.str(n);
        }
        self.u64(b.shape.channels as u64);
        self.u64(b.shape.height as u64);
        self.u64(b.shape.width as u64);
        self.u64(b.weights.len() as u64);
        for &w in &b.weights {
            self.f64(w);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    fn blob(&mut self) -> Result<ClassifierBlob> {
        let kind = self.str()?;
        let n = self.u32()? as usize;
        let class_names = (0..n).map(|_| self.str()).collect::<Result<Vec<_>>>()?;
        let shape = InputShape {
            channels: self.usize()?,
            height: self.usize()?,
            width: self.usize()?,
        };
        let count = self.usize()?;
        if count.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(Error::Checkpoint(format!("weight count {count} exceeds the file size")));
        }
        let weights = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(ClassifierBlob {
            kind,
            class_names,
            shape,
            weights,
        })
    }
}

fn header(kind: u32, phases: &[Phase], mask_margin: u32, threshold: f64, classifiers: u32) -> Writer {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(SCHEMA_VERSION);
    w.u32(kind);
    w.u32(phases.len() as u32);
    for p in phases {
        w.0.push(p.index() as u8);
    }
    w.u32(mask_margin);
    w.f64(threshold);
    w.u32(classifiers);
    w
}

pub fn encode_two_stage(model: &TwoStageModel) -> Result<Vec<u8>> {
    let mut w = header(KIND_TWO_STAGE, &model.phases, model.mask_margin, model.threshold, 3);
    for clf in [&model.stage1, &model.benign, &model.malignant] {
        w.blob(&clf.to_blob()?);
    }
    Ok(w.0)
}

pub fn encode_one_step(model: &OneStepModel) -> Result<Vec<u8>> {
    let mut w = header(KIND_ONE_STEP, &model.phases, model.mask_margin, 0.0, 1);
    w.blob(&model.classifier.to_blob()?);
    Ok(w.0)
}

fn classifier_from_blob(blob: &ClassifierBlob) -> Result<Box<dyn Classifier>> {
    match blob.kind.as_str() {
        REFERENCE_KIND => Ok(Box::new(ReferenceClassifier::from_blob(blob)?)),
        other => Err(Error::Checkpoint(format!("unknown classifier kind `{other}`"))),
    }
}

pub fn decode(bytes: &[u8]) -> Result<SavedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint schema version {version} (expected {SCHEMA_VERSION})"
        )));
    }
    let kind = r.u32()?;
    let n_phases = r.u32()? as usize;
    let phases = (0..n_phases)
        .map(|_| {
            let i = r.u8()? as usize;
            Phase::ALL
                .get(i)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("unknown phase code {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mask_margin = r.u32()?;
    let threshold = r.f64()?;
    let count = r.u32()? as usize;
    let expected = match kind {
        KIND_ONE_STEP => 1,
        KIND_TWO_STAGE => 3,
        other => return Err(Error::Checkpoint(format!("unknown model kind {other}"))),
    };
    if count != expected {
        return Err(Error::Checkpoint(format!("expected {expected} classifiers, found {count}")));
    }
    let mut classifiers = (0..count)
        .map(|_| classifier_from_blob(&r.blob()?))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    for c in &classifiers {
        if c.input_shape().channels != phases.len() {
            return Err(Error::Checkpoint(format!(
                "classifier expects {} channels but the model lists {} phases",
                c.input_shape().channels,
                phases.len()
            )));
        }
    }
    Ok(if kind == KIND_ONE_STEP {
        SavedModel::OneStep(OneStepModel {
            phases,
            classifier: classifiers.remove(0),
            mask_margin,
            fit_report: None,
        })
    } else {
        let malignant = classifiers.pop().expect("three classifiers");
        let benign = classifiers.pop().expect("three classifiers");
        let stage1 = classifiers.pop().expect("three classifiers");
        SavedModel::TwoStage(TwoStageModel {
            phases,
            stage1,
            benign,
            malignant,
            threshold,
            mask_margin,
            fit_reports: BTreeMap::new(),
        })
    })
}

pub fn save(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::harness::write_atomic(path, bytes)
}

pub fn load(path: &Path) -> Result<SavedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
