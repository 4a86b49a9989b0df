//! Domain types shared across the pipeline: phases, slices, slice grids,
//! boxes, composites and the label taxonomy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contrast phase. Canonical order is PC < AP < PVP < DP and a phase's
/// channel index equals its position in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "PC")]
    Pc,
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "PVP")]
    Pvp,
    #[serde(rename = "DP")]
    Dp,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Pc, Phase::Ap, Phase::Pvp, Phase::Dp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Pc => "PC",
            Phase::Ap => "AP",
            Phase::Pvp => "PVP",
            Phase::Dp => "DP",
        }
    }

    /// One-letter code used in ablation variant names (P, A, V, D).
    pub fn letter(self) -> char {
        match self {
            Phase::Pc => 'P',
            Phase::Ap => 'A',
            Phase::Pvp => 'V',
            Phase::Dp => 'D',
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PC" | "P" => Ok(Phase::Pc),
            "AP" | "A" => Ok(Phase::Ap),
            "PVP" | "V" => Ok(Phase::Pvp),
            "DP" | "D" => Ok(Phase::Dp),
            other => Err(Error::invalid(format!("unknown phase `{other}`"))),
        }
    }
}

/// Sorts and deduplicates a phase list into canonical order.
pub fn canonical_phases(phases: &[Phase]) -> Vec<Phase> {
    let mut v = phases.to_vec();
    v.sort();
    v.dedup();
    v
}

/// Axis-aligned integer box, half-open: `[x_min, x_max) × [y_min, y_max)`.
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::invalid(format!(
                "degenerate box ({x_min},{y_min},{x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn fits_within(&self, width: usize, height: usize) -> bool {
        self.x_max as usize <= width && self.y_max as usize <= height
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }

    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        (self.x_min as usize..self.x_max as usize).contains(&x)
            && (self.y_min as usize..self.y_max as usize).contains(&y)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let w = self.x_max.min(other.x_max).saturating_sub(self.x_min.max(other.x_min));
        let h = self.y_max.min(other.y_max).saturating_sub(self.y_min.max(other.y_min));
        u64::from(w) * u64::from(h)
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

/// Channel-major multi-channel image (`channels × height × width`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelImage<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> ChannelImage<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> ChannelImage<U> {
        ChannelImage {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl ChannelImage<u8> {
    /// Lifts 8-bit intensities to reals in `[0, 1]`.
    pub fn to_unit(&self) -> ChannelImage<f64> {
        self.map(|v| f64::from(v) / 255.0)
    }
}

impl ChannelImage<f64> {
    /// Quantizes `[0, 1]` reals back to 8-bit, rounding half away from zero.
    pub fn quantize(&self) -> ChannelImage<u8> {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
    }
}

/// Leaf tumour class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LeafClass {
    /// Hepatic hemangioma.
    HH,
    /// Other benign hepatic tumour.
    OBHT,
    /// Hepatoblastoma.
    HB,
    /// Other malignant hepatic tumour.
    OMHT,
}

impl LeafClass {
    pub const ALL: [LeafClass; 4] = [LeafClass::HH, LeafClass::OBHT, LeafClass::HB, LeafClass::OMHT];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LeafClass::HH => "HH",
            LeafClass::OBHT => "OBHT",
            LeafClass::HB => "HB",
            LeafClass::OMHT => "OMHT",
        }
    }

    pub fn branch(self) -> Branch {
        match self {
            LeafClass::HH | LeafClass::OBHT => Branch::Benign,
            LeafClass::HB | LeafClass::OMHT => Branch::Malignant,
        }
    }

    /// Position within its branch's two-class subtype task.
    pub fn index_in_branch(self) -> usize {
        match self {
            LeafClass::HH | LeafClass::HB => 0,
            LeafClass::OBHT | LeafClass::OMHT => 1,
        }
    }
}

impl fmt::Display for LeafClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LeafClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HH" => Ok(LeafClass::HH),
            "OBHT" => Ok(LeafClass::OBHT),
            "HB" => Ok(LeafClass::HB),
            "OMHT" => Ok(LeafClass::OMHT),
            other => Err(Error::invalid(format!("unknown class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Benign,
    Malignant,
}

impl Branch {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Benign => "benign",
            Branch::Malignant => "malignant",
        }
    }

    pub fn leaves(self) -> [LeafClass; 2] {
        match self {
            Branch::Benign => [LeafClass::HH, LeafClass::OBHT],
            Branch::Malignant => [LeafClass::HB, LeafClass::OMHT],
        }
    }
}

/// Soft label over some task's class set; entries lie on the probability
/// simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector(Vec<f64>);

pub const SIMPLEX_TOL: f64 = 1e-9;

impl LabelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let v = LabelVector(values);
        if !v.is_simplex(SIMPLEX_TOL) {
            return Err(Error::invalid(format!("label {:?} is not on the simplex", v.0)));
        }
        Ok(v)
    }

    /// Wraps values without checking; callers guarantee the simplex.
    pub fn from_raw(values: Vec<f64>) -> Self {
        LabelVector(values)
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut v = vec![0.0; len];
        v[index] = 1.0;
        LabelVector(v)
    }

    pub fn leaf(class: LeafClass) -> Self {
        Self::one_hot(LeafClass::ALL.len(), class.index())
    }

    pub fn is_simplex(&self, tol: f64) -> bool {
        !self.0.is_empty()
            && self.0.iter().all(|&p| p.is_finite() && p >= -tol)
            && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Collapses a 4-leaf label to (benign, malignant) by summing each branch.
    pub fn collapse_to_branches(&self) -> LabelVector {
        let v = &self.0;
        debug_assert_eq!(v.len(), 4);
        LabelVector(vec![v[0] + v[1], v[2] + v[3]])
    }

    /// Restricts a 4-leaf label to one branch's two leaves, renormalized.
    pub fn restrict_to_branch(&self, branch: Branch) -> Option<LabelVector> {
        let [a, b] = branch.leaves().map(|c| self.0[c.index()]);
        let total = a + b;
        (total > 0.0).then(|| LabelVector(vec![a / total, b / total]))
    }
}

/// One exported lesion slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub patient_id: String,
    pub report_id: String,
    pub phase: Phase,
    /// 1-based depth index.
    pub depth: usize,
    pub pixels: GrayImage,
    pub lesion_box: Option<BoundingBox>,
}

/// The `P × K` grid of lesion slices of one radiology report. Cells are
/// addressed by (phase position, depth) with both 1-based in messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceGrid {
    pub report_id: String,
    pub patient_id: String,
    pub class_label: LeafClass,
    phases: Vec<Phase>,
    depth_count: usize,
    cells: Vec<Option<Slice>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GridViolation {
    MissingCell { phase_pos: usize, depth: usize },
    ReportMismatch { phase_pos: usize, depth: usize, found: String },
    CellMismatch { phase_pos: usize, depth: usize },
    DimensionMismatch { phase_pos: usize, depth: usize },
    BoxOutOfBounds { phase_pos: usize, depth: usize },
}

impl fmt::Display for GridViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridViolation::MissingCell { phase_pos, depth } => {
                write!(f, "missing cell ({phase_pos},{depth})")
            }
            GridViolation::ReportMismatch {
                phase_pos,
                depth,
                found,
            } => write!(f, "report_id mismatch at ({phase_pos},{depth}): `{found}`"),
            GridViolation::CellMismatch { phase_pos, depth } => {
                write!(f, "slice at ({phase_pos},{depth}) has wrong phase or depth")
            }
            GridViolation::DimensionMismatch { phase_pos, depth } => {
                write!(f, "image size differs at ({phase_pos},{depth})")
            }
            GridViolation::BoxOutOfBounds { phase_pos, depth } => {
                write!(f, "box exceeds image bounds at ({phase_pos},{depth})")
            }
        }
    }
}

impl SliceGrid {
    /// Empty grid over `phases` (canonicalized) with `depth_count` slices per phase.
    pub fn empty(
        report_id: impl Into<String>,
        patient_id: impl Into<String>,
        class_label: LeafClass,
        phases: &[Phase],
        depth_count: usize,
    ) -> Self {
        let phases = canonical_phases(phases);
        let cells = vec![None; phases.len() * depth_count];
        Self {
            report_id: report_id.into(),
            patient_id: patient_id.into(),
            class_label,
            phases,
            depth_count,
            cells,
        }
    }

    /// Places a slice at its (phase, depth) cell, replacing any previous one.
    pub fn insert(&mut self, slice: Slice) -> Result<()> {
        let pos = self
            .phase_position(slice.phase)
            .ok_or_else(|| Error::invalid(format!("phase {} not in grid", slice.phase)))?;
        if slice.depth == 0 || slice.depth > self.depth_count {
            return Err(Error::invalid(format!(
                "depth {} outside 1..={}",
                slice.depth, self.depth_count
            )));
        }
        let idx = pos * self.depth_count + slice.depth - 1;
        self.cells[idx] = Some(slice);
        Ok(())
    }

    /// Builds and validates a grid from a list of slices.
    pub fn from_slices(
        report_id: impl Into<String>,
        patient_id: impl Into<String>,
        class_label: LeafClass,
        phases: &[Phase],
        depth_count: usize,
        slices: impl IntoIterator<Item = Slice>,
    ) -> Result<Self> {
        let mut grid = Self::empty(report_id, patient_id, class_label, phases, depth_count);
        for s in slices {
            grid.insert(s)?;
        }
        let violations = grid.validate();
        if let Some(v) = violations.first() {
            return Err(Error::invalid(format!("report {}: {v}", grid.report_id)));
        }
        Ok(grid)
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn depth_count(&self) -> usize {
        self.depth_count
    }

    pub fn phase_position(&self, phase: Phase) -> Option<usize> {
        self.phases.iter().position(|&p| p == phase)
    }

    /// Slice at 0-based phase position and 1-based depth.
    pub fn cell(&self, phase_pos: usize, depth: usize) -> Option<&Slice> {
        if phase_pos >= self.phases.len() || depth == 0 || depth > self.depth_count {
            return None;
        }
        self.cells[phase_pos * self.depth_count + depth - 1].as_ref()
    }

    pub fn slice(&self, phase: Phase, depth: usize) -> Option<&Slice> {
        self.cell(self.phase_position(phase)?, depth)
    }

    pub fn remove(&mut self, phase_pos: usize, depth: usize) -> Option<Slice> {
        self.cells
            .get_mut(phase_pos * self.depth_count + depth - 1)
            .and_then(Option::take)
    }

    pub fn slices(&self) -> impl Iterator<Item = &Slice> {
        self.cells.iter().flatten()
    }

    /// (width, height) of the first present slice.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.slices()
            .next()
            .map(|s| (s.pixels.width(), s.pixels.height()))
    }

    /// Copy of the grid keeping only `subset` phases (canonical order).
    pub fn restrict(&self, subset: &[Phase]) -> Result<SliceGrid> {
        let subset = canonical_phases(subset);
        let mut out = SliceGrid::empty(
            self.report_id.clone(),
            self.patient_id.clone(),
            self.class_label,
            &subset,
            self.depth_count,
        );
        for &phase in &subset {
            let pos = self
                .phase_position(phase)
                .ok_or_else(|| Error::invalid(format!("phase {phase} not in grid")))?;
            for k in 1..=self.depth_count {
                if let Some(s) = self.cell(pos, k) {
                    out.insert(s.clone())?;
                }
            }
        }
        Ok(out)
    }

    /// Every invariant violation; empty means the grid is valid.
    pub fn validate(&self) -> Vec<GridViolation> {
        let mut out = Vec::new();
        let dims = self.dims();
        for (pos, &phase) in self.phases.iter().enumerate() {
            for k in 1..=self.depth_count {
                let (phase_pos, depth) = (pos + 1, k);
                let Some(s) = self.cell(pos, k) else {
                    out.push(GridViolation::MissingCell { phase_pos, depth });
                    continue;
                };
                if s.report_id != self.report_id {
                    out.push(GridViolation::ReportMismatch {
                        phase_pos,
                        depth,
                        found: s.report_id.clone(),
                    });
                }
                if s.phase != phase || s.depth != k {
                    out.push(GridViolation::CellMismatch { phase_pos, depth });
                }
                let (w, h) = (s.pixels.width(), s.pixels.height());
                if dims != Some((w, h)) {
                    out.push(GridViolation::DimensionMismatch { phase_pos, depth });
                }
                if let Some(b) = s.lesion_box {
                    if !b.fits_within(w, h) {
                        out.push(GridViolation::BoxOutOfBounds { phase_pos, depth });
                    }
                }
            }
        }
        out
    }
}

/// One slice per phase fused into a multi-channel image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeSet {
    pub report_id: String,
    pub patient_id: String,
    pub phases: Vec<Phase>,
    /// 1-based depth chosen for each phase, aligned with `phases`.
    pub source_indices: Vec<usize>,
    pub channels: ChannelImage<u8>,
    pub union_box: Option<BoundingBox>,
    pub class_label: LeafClass,
    /// Leaf-level label (HH, OBHT, HB, OMHT).
    pub label: LabelVector,
}
