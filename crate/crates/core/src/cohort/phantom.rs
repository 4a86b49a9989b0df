//! Synthetic multi-phase lesion phantoms with exact annotations.
//!
//! Each patient owns one report with a single round lesion. The lesion's
//! cross-section shrinks away from the middle depth, and its appearance in
//! each phase follows a per-class enhancement profile.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CohortManifest, PatientRecord, ReportRecord, Sex, SliceEntry, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{BoundingBox, GrayImage, LeafClass, Phase, Slice, SliceGrid};
use crate::rng;

/// Intensity constants of the clinical profile.
pub mod profile {
    pub const BACKGROUND: [u8; 4] = [100, 120, 150, 130];

    pub const HH_PC: u8 = 80;
    pub const HH_CORE: u8 = 80;
    pub const HH_AP_RING: u8 = 220;
    pub const HH_PVP_RING: u8 = 210;
    pub const HH_DP_FILL: u8 = 200;

    pub const HB_PC: u8 = 90;
    pub const HB_AP_LOW: u8 = 190;
    pub const HB_AP_HIGH: u8 = 220;
    pub const HB_PVP: u8 = 140;
    pub const HB_DP: u8 = 70;

    pub const OBHT_PC: u8 = 95;
    pub const OBHT_SCAR: u8 = 40;
    pub const OBHT_ENHANCED: [u8; 4] = [95, 170, 165, 150];

    pub const OMHT_PHASES: [u8; 4] = [85, 185, 110, 45];

    /// AP-only profile: non-AP phases share one lesion intensity for every class.
    pub const AP_ONLY_SHARED: [u8; 4] = [90, 0, 140, 120];
    pub const AP_ONLY_AP: [u8; 4] = [200, 170, 90, 60];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomProfile {
    /// Class-specific dynamics in every phase.
    #[default]
    Clinical,
    /// Classes differ only in the arterial phase.
    ApOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub counts: BTreeMap<LeafClass, usize>,
    pub height: usize,
    pub width: usize,
    pub noise_sigma: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    pub depth_count: usize,
    pub seed: u64,
    pub profile: PhantomProfile,
    /// Prepended to patient and report ids, so several cohorts can be merged.
    pub id_prefix: String,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            counts: LeafClass::ALL.iter().map(|&c| (c, 10)).collect(),
            height: 32,
            width: 32,
            noise_sigma: 4.0,
            radius_min: 5.0,
            radius_max: 9.0,
            depth_count: 3,
            seed: 0,
            profile: PhantomProfile::Clinical,
            id_prefix: String::new(),
        }
    }
}

impl PhantomSpec {
    pub fn with_counts(counts: [usize; 4]) -> Self {
        Self {
            counts: LeafClass::ALL.into_iter().zip(counts).collect(),
            ..Self::default()
        }
    }

    pub fn count(&self, class: LeafClass) -> usize {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    pub fn patient_count(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "phantom image {}x{} is smaller than 8x8",
                self.height, self.width
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be a finite value >= 0".into()));
        }
        if !(self.radius_min >= 1.0 && self.radius_min <= self.radius_max) {
            return Err(Error::Config("radius range must satisfy 1 <= min <= max".into()));
        }
        if 2.0 * self.radius_max + 2.0 > self.height.min(self.width) as f64 {
            return Err(Error::Config("radius range does not fit inside the image".into()));
        }
        if self.depth_count == 0 {
            return Err(Error::Config("depth_count must be >= 1".into()));
        }
        Ok(())
    }

    /// Radius multiplier at 1-based depth `k`: 1 at the middle, 0.75 at the ends.
    pub fn depth_factor(&self, k: usize) -> f64 {
        let mid = (self.depth_count as f64 + 1.0) / 2.0;
        let span = (mid - 1.0).max(1.0);
        1.0 - 0.25 * (k as f64 - mid).abs() / span
    }
}

/// Ground-truth parameters of one generated report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomReport {
    pub index: usize,
    pub patient_id: String,
    pub report_id: String,
    pub class: LeafClass,
    pub age: f64,
    pub sex: Sex,
    pub center: (f64, f64),
    pub radius: f64,
}

impl PhantomReport {
    /// Lesion membership per pixel at depth `k` (row-major).
    pub fn lesion_mask(&self, spec: &PhantomSpec, k: usize) -> Vec<bool> {
        let r = self.radius * spec.depth_factor(k);
        let (cx, cy) = self.center;
        let mut mask = vec![false; spec.width * spec.height];
        for y in 0..spec.height {
            for x in 0..spec.width {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                mask[y * spec.width + x] = (dx * dx + dy * dy).sqrt() < r;
            }
        }
        mask
    }

    /// Tight half-open box around the lesion pixels at depth `k`.
    pub fn lesion_box(&self, spec: &PhantomSpec, k: usize) -> Option<BoundingBox> {
        let mask = self.lesion_mask(spec, k);
        let mut b: Option<[u32; 4]> = None;
        for y in 0..spec.height {
            for x in 0..spec.width {
                if mask[y * spec.width + x] {
                    let (x, y) = (x as u32, y as u32);
                    b = Some(match b {
                        None => [x, y, x + 1, y + 1],
                        Some([x0, y0, x1, y1]) => [x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)],
                    });
                }
            }
        }
        b.map(|[x0, y0, x1, y1]| BoundingBox {
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        })
    }

    /// Noise-free rendering of one slice.
    pub fn render_clean(&self, spec: &PhantomSpec, phase: Phase, k: usize) -> GrayImage {
        let r = self.radius * spec.depth_factor(k);
        let mask = self.lesion_mask(spec, k);
        let (cx, cy) = self.center;
        let mut img = GrayImage::filled(spec.width, spec.height, profile::BACKGROUND[phase.index()]);
        for y in 0..spec.height {
            for x in 0..spec.width {
                if mask[y * spec.width + x] {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    let rho = (dx * dx + dy * dy).sqrt() / r;
                    img.set(x, y, lesion_intensity(spec.profile, self.class, phase, rho, x, y));
                }
            }
        }
        img
    }

    /// Rendering with the slice's own noise stream applied.
    pub fn render(&self, spec: &PhantomSpec, phase: Phase, k: usize) -> GrayImage {
        let mut img = self.render_clean(spec, phase, k);
        if spec.noise_sigma > 0.0 {
            let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
            let mut rng = rng::stream(spec.seed, &[2, self.index as u64, phase.index() as u64, k as u64]);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let v = f64::from(img.get(x, y)) + noise.sample(&mut rng);
                    img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        img
    }

    pub fn image_path(&self, phase: Phase, k: usize) -> String {
        format!("images/{}_{}_k{}.png", self.report_id, phase.name(), k)
    }
}

fn lesion_intensity(profile: PhantomProfile, class: LeafClass, phase: Phase, rho: f64, x: usize, y: usize) -> u8 {
    use self::profile::*;
    if profile == PhantomProfile::ApOnly {
        return match phase {
            Phase::Ap => AP_ONLY_AP[class.index()],
            _ => AP_ONLY_SHARED[phase.index()],
        };
    }
    match (class, phase) {
        (LeafClass::HH, Phase::Pc) => HH_PC,
        // peripheral ring with centripetal fill-in
        (LeafClass::HH, Phase::Ap) => if rho >= 0.7 { HH_AP_RING } else { HH_CORE },
        (LeafClass::HH, Phase::Pvp) => if rho >= 0.4 { HH_PVP_RING } else { HH_CORE },
        (LeafClass::HH, Phase::Dp) => HH_DP_FILL,
        (LeafClass::HB, Phase::Pc) => HB_PC,
        (LeafClass::HB, Phase::Ap) => if (x / 2 + y / 2).is_multiple_of(2) { HB_AP_LOW } else { HB_AP_HIGH },
        (LeafClass::HB, Phase::Pvp) => HB_PVP,
        (LeafClass::HB, Phase::Dp) => HB_DP,
        (LeafClass::OBHT, Phase::Pc) => OBHT_PC,
        (LeafClass::OBHT, p) => if rho < 0.35 { OBHT_SCAR } else { OBHT_ENHANCED[p.index()] },
        (LeafClass::OMHT, p) => OMHT_PHASES[p.index()],
    }
}

/// A generated cohort held in memory.
#[derive(Debug, Clone)]
pub struct PhantomCohort {
    pub spec: PhantomSpec,
    pub manifest: CohortManifest,
    pub reports: Vec<PhantomReport>,
    pub grids: Vec<SliceGrid>,
}

fn sample_reports(spec: &PhantomSpec) -> Vec<PhantomReport> {
    let mut out = Vec::with_capacity(spec.patient_count());
    let mut index = 0usize;
    for class in LeafClass::ALL {
        for _ in 0..spec.count(class) {
            let mut rng = rng::stream(spec.seed, &[1, index as u64]);
            let radius = rng.random_range(spec.radius_min..=spec.radius_max);
            let margin = radius + 1.0;
            let cx = rng.random_range(margin..=spec.width as f64 - margin);
            let cy = rng.random_range(margin..=spec.height as f64 - margin);
            let age = (rng.random_range(0.5..14.0f64) * 10.0).round() / 10.0;
            let sex = if rng.random_bool(0.5) { Sex::F } else { Sex::M };
            out.push(PhantomReport {
                index,
                patient_id: format!("{}P{:04}", spec.id_prefix, index + 1),
                report_id: format!("{}R{:04}", spec.id_prefix, index + 1),
                class,
                age,
                sex,
                center: (cx, cy),
                radius,
            });
            index += 1;
        }
    }
    out
}

/// Generates a cohort in memory: manifest (with relative image paths), the
/// ground-truth parameters and the decoded slice grids.
pub fn generate_phantom_cohort(spec: &PhantomSpec, exec: Execution) -> Result<PhantomCohort> {
    spec.validate()?;
    let reports = sample_reports(spec);
    let mut manifest = CohortManifest::new(&Phase::ALL, spec.depth_count);
    manifest.height = Some(spec.height);
    manifest.width = Some(spec.width);
    let grids = exec.try_map(&reports, |r| {
        let mut grid = SliceGrid::empty(&r.report_id, &r.patient_id, r.class, &Phase::ALL, spec.depth_count);
        for phase in Phase::ALL {
            for k in 1..=spec.depth_count {
                grid.insert(Slice {
                    patient_id: r.patient_id.clone(),
                    report_id: r.report_id.clone(),
                    phase,
                    depth: k,
                    pixels: r.render(spec, phase, k),
                    lesion_box: r.lesion_box(spec, k),
                })?;
            }
        }
        Ok::<_, Error>(grid)
    })?;
    for (r, g) in reports.iter().zip(&grids) {
        let slices = Phase::ALL
            .iter()
            .flat_map(|&phase| {
                (1..=spec.depth_count).map(move |k| SliceEntry {
                    phase,
                    k,
                    path: r.image_path(phase, k),
                    lesion_box: g.slice(phase, k).and_then(|s| s.lesion_box),
                })
            })
            .collect();
        manifest.patients.push(PatientRecord {
            patient_id: r.patient_id.clone(),
            age: r.age,
            sex: r.sex,
            reports: vec![ReportRecord {
                report_id: r.report_id.clone(),
                class: r.class,
                slices,
            }],
        });
    }
    manifest.validate_structure()?;
    Ok(PhantomCohort {
        spec: spec.clone(),
        manifest,
        reports,
        grids,
    })
}

/// Generates a cohort and writes `manifest.json` plus one PNG per slice
/// under `out_dir`.
pub fn write_phantom_cohort(spec: &PhantomSpec, out_dir: impl AsRef<Path>, exec: Execution) -> Result<PhantomCohort> {
    let out_dir = out_dir.as_ref();
    let mut cohort = generate_phantom_cohort(spec, exec)?;
    let images = out_dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let jobs: Vec<(&PhantomReport, &SliceGrid)> = cohort.reports.iter().zip(&cohort.grids).collect();
    exec.try_map(&jobs, |(r, g)| {
        for s in g.slices() {
            let path = out_dir.join(r.image_path(s.phase, s.depth));
            image::save_buffer(
                &path,
                s.pixels.pixels(),
                s.pixels.width() as u32,
                s.pixels.height() as u32,
                image::ExtendedColorType::L8,
            )
            .map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        Ok::<_, Error>(())
    })?;
    cohort.manifest.base_dir = out_dir.to_path_buf();
    super::save_manifest(&cohort.manifest, out_dir.join(MANIFEST_FILE))?;
    Ok(cohort)
}
