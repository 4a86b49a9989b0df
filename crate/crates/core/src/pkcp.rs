//! Phase-wise K-slice Cartesian product: recombines one slice per phase into
//! composite multi-channel samples.
//!
//! Minority classes expand to every depth tuple (`K^P` composites per
//! report); majority classes keep only the `K` depth-aligned tuples.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{BoundingBox, ChannelImage, CompositeSet, LabelVector, LeafClass, Slice, SliceGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpansionMode {
    /// Full Cartesian product over depths.
    Minority,
    /// Depth-aligned tuples only.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionPolicy {
    modes: BTreeMap<LeafClass, ExpansionMode>,
}

impl Default for ExpansionPolicy {
    /// OBHT and OMHT expand fully, HH and HB stay depth-aligned.
    fn default() -> Self {
        Self::from_fn(|c| match c {
            LeafClass::OBHT | LeafClass::OMHT => ExpansionMode::Minority,
            LeafClass::HH | LeafClass::HB => ExpansionMode::Majority,
        })
    }
}

impl ExpansionPolicy {
    pub fn from_fn(f: impl Fn(LeafClass) -> ExpansionMode) -> Self {
        Self {
            modes: LeafClass::ALL.iter().map(|&c| (c, f(c))).collect(),
        }
    }

    pub fn all_minority() -> Self {
        Self::from_fn(|_| ExpansionMode::Minority)
    }

    pub fn all_majority() -> Self {
        Self::from_fn(|_| ExpansionMode::Majority)
    }

    pub fn mode(&self, class: LeafClass) -> ExpansionMode {
        self.modes[&class]
    }
}

impl FromStr for ExpansionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" | "rebalanced" => Ok(Self::default()),
            "all-minority" => Ok(Self::all_minority()),
            "all-majority" => Ok(Self::all_majority()),
            other => Err(Error::invalid(format!(
                "unknown policy `{other}` (expected default, all-minority or all-majority)"
            ))),
        }
    }
}

/// Number of composites a grid expands to under `mode`.
pub fn composite_count(phases: usize, depths: usize, mode: ExpansionMode) -> usize {
    match mode {
        ExpansionMode::Minority => depths.pow(phases as u32),
        ExpansionMode::Majority => depths,
    }
}

/// Depth tuples (1-based) in lexicographic order.
pub fn depth_tuples(phases: usize, depths: usize, mode: ExpansionMode) -> Vec<Vec<usize>> {
    if depths == 0 {
        return Vec::new();
    }
    match mode {
        ExpansionMode::Majority => (1..=depths).map(|j| vec![j; phases]).collect(),
        ExpansionMode::Minority => {
            let mut out = Vec::with_capacity(composite_count(phases, depths, mode));
            let mut cur = vec![1usize; phases];
            loop {
                out.push(cur.clone());
                // odometer: last phase varies fastest
                let mut i = phases;
                loop {
                    if i == 0 {
                        return out;
                    }
                    i -= 1;
                    if cur[i] < depths {
                        cur[i] += 1;
                        break;
                    }
                    cur[i] = 1;
                }
            }
        }
    }
}

/// Smallest box containing every input box.
pub fn union_box(boxes: &[BoundingBox]) -> Result<BoundingBox> {
    let (first, rest) = boxes
        .split_first()
        .ok_or_else(|| Error::invalid("no constituent annotations"))?;
    Ok(rest.iter().fold(*first, |acc, b| BoundingBox {
        x_min: acc.x_min.min(b.x_min),
        y_min: acc.y_min.min(b.y_min),
        x_max: acc.x_max.max(b.x_max),
        y_max: acc.y_max.max(b.y_max),
    }))
}

/// Stacks one slice per phase into a channel image, in the given order.
pub fn fuse_channels(selected: &[&Slice]) -> Result<ChannelImage<u8>> {
    let first = selected
        .first()
        .ok_or_else(|| Error::invalid("no slices to fuse"))?;
    let (w, h) = (first.pixels.width(), first.pixels.height());
    let mut data = Vec::with_capacity(selected.len() * w * h);
    for s in selected {
        if s.pixels.width() != w || s.pixels.height() != h {
            return Err(Error::Shape(format!(
                "slice {} k={} is {}x{}, expected {h}x{w}",
                s.phase,
                s.depth,
                s.pixels.height(),
                s.pixels.width()
            )));
        }
        data.extend_from_slice(s.pixels.pixels());
    }
    ChannelImage::new(selected.len(), h, w, data)
}

/// Builds the composite for one depth tuple.
pub fn build_composite(grid: &SliceGrid, indices: &[usize]) -> Result<CompositeSet> {
    let selected = grid
        .phases()
        .iter()
        .enumerate()
        .zip(indices)
        .map(|((pos, phase), &k)| {
            grid.cell(pos, k)
                .ok_or_else(|| Error::invalid(format!("report {}: no slice for {phase} k={k}", grid.report_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let channels = fuse_channels(&selected)?;
    let boxes: Vec<BoundingBox> = selected.iter().filter_map(|s| s.lesion_box).collect();
    // a composite with any unannotated slice carries no box
    let union_box = if boxes.len() == selected.len() {
        Some(union_box(&boxes)?)
    } else {
        None
    };
    Ok(CompositeSet {
        report_id: grid.report_id.clone(),
        patient_id: grid.patient_id.clone(),
        phases: grid.phases().to_vec(),
        source_indices: indices.to_vec(),
        channels,
        union_box,
        class_label: grid.class_label,
        label: LabelVector::leaf(grid.class_label),
    })
}

/// Expands one validated grid according to its class's mode.
pub fn enumerate_composites(grid: &SliceGrid, policy: &ExpansionPolicy) -> Result<Vec<CompositeSet>> {
    if let Some(v) = grid.validate().first() {
        return Err(Error::invalid(format!("report {}: {v}", grid.report_id)));
    }
    let mode = policy.mode(grid.class_label);
    depth_tuples(grid.phase_count(), grid.depth_count(), mode)
        .iter()
        .map(|t| build_composite(grid, t))
        .collect()
}

/// Expands many grids, preserving input order.
pub fn enumerate_cohort(grids: &[SliceGrid], policy: &ExpansionPolicy, exec: Execution) -> Result<Vec<CompositeSet>> {
    let per = exec.try_map(grids, |g| enumerate_composites(g, policy))?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeIndexEntry {
    pub file: String,
    pub report_id: String,
    pub phases: Vec<crate::model::Phase>,
    pub source_indices: Vec<usize>,
    /// `[channels, height, width]` of the raw array.
    pub shape: [usize; 3],
    pub union_box: Option<BoundingBox>,
    pub label: LabelVector,
}

/// Writes each composite as a raw channel-major `u8` array plus an
/// `index.json` sidecar describing all of them.
pub fn write_composites(composites: &[CompositeSet], out_dir: &Path) -> Result<Vec<CompositeIndexEntry>> {
    let data_dir = out_dir.join("composites");
    fs::create_dir_all(&data_dir).map_err(|e| Error::io(&data_dir, e))?;
    let mut index = Vec::with_capacity(composites.len());
    for c in composites {
        let tag: Vec<String> = c.source_indices.iter().map(|k| k.to_string()).collect();
        let file = format!("composites/{}_{}.u8", c.report_id, tag.join(""));
        crate::harness::write_atomic(&out_dir.join(&file), c.channels.data())?;
        let (ch, h, w) = c.channels.shape();
        index.push(CompositeIndexEntry {
            file,
            report_id: c.report_id.clone(),
            phases: c.phases.clone(),
            source_indices: c.source_indices.clone(),
            shape: [ch, h, w],
            union_box: c.union_box,
            label: c.label.clone(),
        });
    }
    let json = serde_json::to_string_pretty(&index).map_err(|e| Error::invalid(e.to_string()))?;
    crate::harness::write_atomic(&out_dir.join("index.json"), json.as_bytes())?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GrayImage, Phase};
    use proptest::prelude::*;

    fn grid(phases: &[Phase], k: usize, class: LeafClass) -> SliceGrid {
        let mut g = SliceGrid::empty("r", "p", class, phases, k);
        for (pos, &phase) in g.phases().to_vec().iter().enumerate() {
            for d in 1..=k {
                let v = (10 * (pos + 1) + d) as u8;
                g.insert(Slice {
                    patient_id: "p".into(),
                    report_id: "r".into(),
                    phase,
                    depth: d,
                    pixels: GrayImage::filled(6, 5, v),
                    lesion_box: Some(BoundingBox::new(d as u32, pos as u32, d as u32 + 2, pos as u32 + 1).unwrap()),
                })
                .unwrap();
            }
        }
        g
    }

    /// Independent enumerator: decode every integer in [0, K^P) as base-K digits.
    fn brute_tuples(p: usize, k: usize) -> Vec<Vec<usize>> {
        (0..k.pow(p as u32))
            .map(|mut n| {
                let mut t = vec![0; p];
                for slot in t.iter_mut().rev() {
                    *slot = n % k + 1;
                    n /= k;
                }
                t
            })
            .collect()
    }

    #[test]
    fn four_phase_three_depth_counts() {
        let g = grid(&Phase::ALL, 3, LeafClass::OBHT);
        assert_eq!(enumerate_composites(&g, &ExpansionPolicy::default()).unwrap().len(), 81);
        let g = grid(&Phase::ALL, 3, LeafClass::HH);
        let cs = enumerate_composites(&g, &ExpansionPolicy::default()).unwrap();
        let idx: Vec<_> = cs.iter().map(|c| c.source_indices.clone()).collect();
        assert_eq!(idx, vec![vec![1; 4], vec![2; 4], vec![3; 4]]);
    }

    #[test]
    fn singleton_and_two_by_two() {
        for policy in [ExpansionPolicy::all_minority(), ExpansionPolicy::all_majority()] {
            assert_eq!(enumerate_composites(&grid(&[Phase::Ap], 1, LeafClass::HB), &policy).unwrap().len(), 1);
        }
        let cs = enumerate_composites(&grid(&[Phase::Pc, Phase::Ap], 2, LeafClass::HB), &ExpansionPolicy::all_minority())
            .unwrap();
        let idx: Vec<_> = cs.iter().map(|c| c.source_indices.clone()).collect();
        assert_eq!(idx, vec![vec![1, 1], vec![1, 2], vec![2, 1], vec![2, 2]]);
    }

    #[test]
    fn union_box_cases() {
        let b = |a, b, c, d| BoundingBox::new(a, b, c, d).unwrap();
        assert_eq!(union_box(&[b(10, 10, 50, 50); 4]).unwrap(), b(10, 10, 50, 50));
        assert_eq!(union_box(&[b(0, 0, 10, 10), b(5, 5, 20, 20)]).unwrap(), b(0, 0, 20, 20));
        assert_eq!(union_box(&[b(0, 0, 2, 2), b(8, 8, 9, 9), b(3, 0, 4, 1)]).unwrap(), b(0, 0, 9, 9));
        assert_eq!(union_box(&[]).unwrap_err().to_string(), "no constituent annotations");
    }

    #[test]
    fn union_box_matches_pixel_brute_force() {
        // smallest box over the integer grid containing every covered pixel
        let b = |a, b, c, d| BoundingBox::new(a, b, c, d).unwrap();
        let boxes = [b(0, 0, 2, 2), b(8, 8, 9, 9), b(3, 0, 4, 1)];
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..16u32 {
            for x in 0..16u32 {
                if boxes.iter().any(|bb| bb.contains_pixel(x as usize, y as usize)) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        assert_eq!(union_box(&boxes).unwrap(), b(x0, y0, x1, y1));
    }

    #[test]
    fn fuse_preserves_phase_order() {
        let slices: Vec<Slice> = Phase::ALL
            .iter()
            .map(|&phase| Slice {
                patient_id: "p".into(),
                report_id: "r".into(),
                phase,
                depth: 1,
                pixels: GrayImage::filled(3, 3, phase.index() as u8 + 1),
                lesion_box: None,
            })
            .collect();
        let refs: Vec<&Slice> = slices.iter().collect();
        let img = fuse_channels(&refs).unwrap();
        for p in 0..4 {
            assert!(img.channel(p).iter().all(|&v| v == p as u8 + 1));
        }
        let zeros: Vec<Slice> = slices.iter().map(|s| Slice { pixels: GrayImage::filled(3, 3, 0), ..s.clone() }).collect();
        let refs: Vec<&Slice> = zeros.iter().collect();
        assert!(fuse_channels(&refs).unwrap().data().iter().all(|&v| v == 0));
    }

    #[test]
    fn fuse_rejects_mismatched_sizes() {
        let a = Slice {
            patient_id: "p".into(),
            report_id: "r".into(),
            phase: Phase::Pc,
            depth: 1,
            pixels: GrayImage::filled(3, 3, 0),
            lesion_box: None,
        };
        let b = Slice {
            phase: Phase::Ap,
            pixels: GrayImage::filled(4, 3, 0),
            ..a.clone()
        };
        assert!(fuse_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn missing_annotation_drops_union_box() {
        let mut g = grid(&[Phase::Pc, Phase::Ap], 1, LeafClass::HH);
        let mut s = g.slice(Phase::Ap, 1).unwrap().clone();
        s.lesion_box = None;
        g.insert(s).unwrap();
        let cs = enumerate_composites(&g, &ExpansionPolicy::default()).unwrap();
        assert_eq!(cs[0].union_box, None);
    }

    #[test]
    fn invalid_grid_rejected() {
        let mut g = grid(&Phase::ALL, 2, LeafClass::HH);
        g.remove(0, 1);
        assert!(enumerate_composites(&g, &ExpansionPolicy::default()).is_err());
    }

    proptest! {
        #[test]
        fn count_and_order_laws(p in 1usize..=4, k in 1usize..=4) {
            let phases = &Phase::ALL[..p];
            let g = grid(phases, k, LeafClass::HH);
            let minority = enumerate_composites(&g, &ExpansionPolicy::all_minority()).unwrap();
            let majority = enumerate_composites(&g, &ExpansionPolicy::all_majority()).unwrap();
            let idx: Vec<_> = minority.iter().map(|c| c.source_indices.clone()).collect();
            prop_assert_eq!(idx, brute_tuples(p, k));
            prop_assert_eq!(majority.len(), k);
            for c in &majority {
                prop_assert!(c.source_indices.iter().all(|&d| d == c.source_indices[0]));
            }
            for c in minority.iter().chain(&majority) {
                let ub = c.union_box.unwrap();
                for (pos, &d) in c.source_indices.iter().enumerate() {
                    let s = g.cell(pos, d).unwrap();
                    prop_assert!(ub.contains_box(&s.lesion_box.unwrap()));
                    prop_assert_eq!(c.channels.channel(pos), s.pixels.pixels());
                }
            }
            prop_assert_eq!(enumerate_composites(&g, &ExpansionPolicy::all_minority()).unwrap(), minority);
        }

        #[test]
        fn union_box_is_minimal(raw in proptest::collection::vec((0u32..20, 0u32..20, 1u32..10, 1u32..10), 1..6)) {
            let boxes: Vec<BoundingBox> = raw.iter()
                .map(|&(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
                .collect();
            let u = union_box(&boxes).unwrap();
            prop_assert!(boxes.iter().all(|b| u.contains_box(b)));
            let shrunk = [
                BoundingBox { x_min: u.x_min + 1, ..u },
                BoundingBox { y_min: u.y_min + 1, ..u },
                BoundingBox { x_max: u.x_max - 1, ..u },
                BoundingBox { y_max: u.y_max - 1, ..u },
            ];
            for s in shrunk {
                prop_assert!(!boxes.iter().all(|b| s.contains_box(b)));
            }
        }
    }
}
