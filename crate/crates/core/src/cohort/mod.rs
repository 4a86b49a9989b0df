//! Cohort manifests: loading, validation, patient-grouped splitting and
//! materialization into slice grids.

mod phantom;
mod window;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{canonical_phases, BoundingBox, GrayImage, LeafClass, Phase, Slice, SliceGrid};
use crate::rng;

pub use phantom::{
    generate_phantom_cohort, write_phantom_cohort, PhantomCohort, PhantomProfile, PhantomReport,
    PhantomSpec,
};
pub use window::{apply_window, WindowSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceEntry {
    pub phase: Phase,
    pub k: usize,
    pub path: String,
    #[serde(rename = "box", default)]
    pub lesion_box: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub report_id: String,
    pub class: LeafClass,
    pub slices: Vec<SliceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: f64,
    pub sex: Sex,
    pub reports: Vec<ReportRecord>,
}

/// A cohort: patients owning reports owning slice entries, plus an optional
/// report-level split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortManifest {
    pub schema_version: u32,
    pub phases: Vec<Phase>,
    #[serde(rename = "K")]
    pub depth_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    pub patients: Vec<PatientRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub splits: BTreeMap<String, Split>,
    /// Directory image paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub patients: usize,
    pub reports: usize,
    pub slices: usize,
}

impl CohortManifest {
    pub fn new(phases: &[Phase], depth_count: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            phases: canonical_phases(phases),
            depth_count,
            height: None,
            width: None,
            patients: Vec::new(),
            splits: BTreeMap::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn reports(&self) -> impl Iterator<Item = (&PatientRecord, &ReportRecord)> {
        self.patients
            .iter()
            .flat_map(|p| p.reports.iter().map(move |r| (p, r)))
    }

    pub fn slice_count(&self) -> usize {
        self.reports().map(|(_, r)| r.slices.len()).sum()
    }

    pub fn split_of(&self, report_id: &str) -> Option<Split> {
        self.splits.get(report_id).copied()
    }

    /// Split of a patient, if all its reports agree and are assigned.
    pub fn patient_split(&self, patient: &PatientRecord) -> Option<Split> {
        let mut it = patient.reports.iter().map(|r| self.split_of(&r.report_id));
        let first = it.next()??;
        it.all(|s| s == Some(first)).then_some(first)
    }

    pub fn counts(&self, split: Split) -> SplitCounts {
        let mut c = SplitCounts::default();
        for p in &self.patients {
            let mut any = false;
            for r in &p.reports {
                if self.split_of(&r.report_id) == Some(split) {
                    any = true;
                    c.reports += 1;
                    c.slices += r.slices.len();
                }
            }
            c.patients += usize::from(any);
        }
        c
    }

    /// Assigns every report to `split`.
    pub fn assign_all(&mut self, split: Split) {
        let ids: Vec<String> = self.reports().map(|(_, r)| r.report_id.clone()).collect();
        for id in ids {
            self.splits.insert(id, split);
        }
    }

    /// Appends another cohort's patients; ids must stay unique.
    pub fn merge(&mut self, other: CohortManifest) -> Result<()> {
        if other.phases != self.phases || other.depth_count != self.depth_count {
            return Err(Error::Manifest("cannot merge cohorts with different P or K".into()));
        }
        self.patients.extend(other.patients);
        self.splits.extend(other.splits);
        self.validate_structure()
    }

    /// Structural checks that need no file access.
    pub fn validate_structure(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.phases.is_empty() || canonical_phases(&self.phases).len() != self.phases.len() {
            return Err(Error::Manifest("phases must be a non-empty list of distinct phases".into()));
        }
        if self.depth_count == 0 {
            return Err(Error::Manifest("K must be at least 1".into()));
        }
        let expected = self.phases.len() * self.depth_count;
        let mut patient_ids = HashSet::new();
        let mut report_ids = HashSet::new();
        for p in &self.patients {
            if !patient_ids.insert(p.patient_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate patient_id `{}`", p.patient_id)));
            }
            for r in &p.reports {
                if !report_ids.insert(r.report_id.as_str()) {
                    return Err(Error::Manifest(format!("duplicate report_id `{}`", r.report_id)));
                }
                if r.slices.len() != expected {
                    return Err(Error::Manifest(format!(
                        "report `{}` has {} slices, expected P*K = {expected}",
                        r.report_id,
                        r.slices.len()
                    )));
                }
                let mut cells = HashSet::new();
                for s in &r.slices {
                    if !self.phases.contains(&s.phase) {
                        return Err(Error::Manifest(format!(
                            "report `{}`: phase {} not declared in `phases`",
                            r.report_id, s.phase
                        )));
                    }
                    if s.k == 0 || s.k > self.depth_count {
                        return Err(Error::Manifest(format!(
                            "report `{}`: k = {} outside 1..={}",
                            r.report_id, s.k, self.depth_count
                        )));
                    }
                    if !cells.insert((s.phase, s.k)) {
                        return Err(Error::Manifest(format!(
                            "report `{}`: duplicate slice ({}, k={})",
                            r.report_id, s.phase, s.k
                        )));
                    }
                }
            }
            let splits: BTreeSet<_> = p.reports.iter().map(|r| self.split_of(&r.report_id)).collect();
            if splits.len() > 1 {
                return Err(Error::Manifest(format!(
                    "patient `{}` has reports in different splits",
                    p.patient_id
                )));
            }
        }
        if let Some(id) = self.splits.keys().find(|id| !report_ids.contains(id.as_str())) {
            return Err(Error::Manifest(format!("split assigned to unknown report `{id}`")));
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &SliceEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    /// Checks that every image exists and sizes agree within each report
    /// (and with the declared height/width, when present).
    pub fn validate_images(&self, exec: Execution) -> Result<()> {
        let reports: Vec<&ReportRecord> = self.reports().map(|(_, r)| r).collect();
        exec.try_map(&reports, |r| {
            let mut dims: Option<(u32, u32)> = None;
            for s in &r.slices {
                let path = self.resolve(s);
                if !path.is_file() {
                    return Err(Error::io(
                        &path,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "image file not found"),
                    ));
                }
                let d = image::image_dimensions(&path).map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                self.check_dims(r, s, d, &mut dims, &path)?;
            }
            Ok(())
        })
        .map(|_| ())
    }

    fn check_dims(
        &self,
        r: &ReportRecord,
        s: &SliceEntry,
        (w, h): (u32, u32),
        dims: &mut Option<(u32, u32)>,
        path: &Path,
    ) -> Result<()> {
        if self.width.is_some_and(|dw| dw != w as usize) || self.height.is_some_and(|dh| dh != h as usize)
        {
            return Err(Error::Manifest(format!(
                "{}: image is {h}x{w}, manifest declares {}x{}",
                path.display(),
                self.height.unwrap_or(h as usize),
                self.width.unwrap_or(w as usize)
            )));
        }
        match dims {
            Some(d) if *d != (w, h) => {
                return Err(Error::Manifest(format!(
                    "report `{}`: slice sizes differ ({}x{} vs {}x{})",
                    r.report_id, d.1, d.0, h, w
                )))
            }
            None => *dims = Some((w, h)),
            _ => {}
        }
        if let Some(b) = s.lesion_box {
            if !b.fits_within(w as usize, h as usize) {
                return Err(Error::Manifest(format!(
                    "report `{}`: box {b} exceeds image bounds {h}x{w}",
                    r.report_id
                )));
            }
        }
        Ok(())
    }

    /// Decodes every report into a slice grid, in manifest order.
    pub fn load_grids(&self, exec: Execution) -> Result<Vec<SliceGrid>> {
        let reports: Vec<(&PatientRecord, &ReportRecord)> = self.reports().collect();
        exec.try_map(&reports, |(p, r)| {
            let mut slices = Vec::with_capacity(r.slices.len());
            for s in &r.slices {
                let path = self.resolve(s);
                let img = image::open(&path)
                    .map_err(|e| Error::Image {
                        path: path.clone(),
                        message: e.to_string(),
                    })?
                    .into_luma8();
                let (w, h) = img.dimensions();
                slices.push(Slice {
                    patient_id: p.patient_id.clone(),
                    report_id: r.report_id.clone(),
                    phase: s.phase,
                    depth: s.k,
                    pixels: GrayImage::new(w as usize, h as usize, img.into_raw())?,
                    lesion_box: s.lesion_box,
                });
            }
            SliceGrid::from_slices(
                r.report_id.clone(),
                p.patient_id.clone(),
                r.class,
                &self.phases,
                self.depth_count,
                slices,
            )
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }
}

/// Parses and validates a manifest, including every referenced image.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let m = parse_manifest(path)?;
    m.validate_images(Execution::default())?;
    Ok(m)
}

/// Parses a manifest and runs the structural checks only.
pub fn parse_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: CohortManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate_structure()?;
    Ok(m)
}

/// Writes a manifest to `path` via a temporary file and rename.
pub fn save_manifest(manifest: &CohortManifest, path: impl AsRef<Path>) -> Result<()> {
    crate::harness::write_atomic(path.as_ref(), manifest.to_json()?.as_bytes())
}

/// Randomly partitions patients into train/val. Patients already assigned to
/// `test` are left untouched. `round(train_fraction * N)` patients go to train.
pub fn split_by_patient(
    manifest: &CohortManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<CohortManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut out = manifest.clone();
    let mut pool: Vec<usize> = (0..out.patients.len())
        .filter(|&i| out.patient_split(&out.patients[i]) != Some(Split::Test))
        .collect();
    let n = pool.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 patients to split, have {n}")));
    }
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} over {n} patients leaves an empty split"
        )));
    }
    pool.shuffle(&mut rng::stream(seed, &[0x5B11]));
    for (rank, &pi) in pool.iter().enumerate() {
        let split = if rank < n_train { Split::Train } else { Split::Val };
        let ids: Vec<String> = out.patients[pi].reports.iter().map(|r| r.report_id.clone()).collect();
        for id in ids {
            out.splits.insert(id, split);
        }
    }
    Ok(out)
}
