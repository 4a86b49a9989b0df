//! Hand-designed global features of a masked multi-channel image.

use crate::model::BoundingBox;

use super::Sample;

/// Side of the average-pooling grid.
pub const POOL_GRID: usize = 8;

/// Per channel: mean, variance, ROI mean, ROI variance and the pooled grid;
/// plus one global ROI area fraction.
pub fn feature_dim(channels: usize) -> usize {
    channels * (4 + POOL_GRID * POOL_GRID) + 1
}

fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sq += v * v;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    (mean, (sq / n as f64 - mean * mean).max(0.0))
}

fn clip_roi(roi: Option<BoundingBox>, w: usize, h: usize) -> (usize, usize, usize, usize) {
    match roi {
        Some(b) => (
            (b.x_min as usize).min(w),
            (b.y_min as usize).min(h),
            (b.x_max as usize).min(w),
            (b.y_max as usize).min(h),
        ),
        None => (0, 0, w, h),
    }
}

pub fn extract_features(sample: &Sample) -> Vec<f64> {
    let img = &sample.image;
    let (ch, h, w) = img.shape();
    let (x0, y0, x1, y1) = clip_roi(sample.roi, w, h);
    let mut out = Vec::with_capacity(feature_dim(ch));
    for c in 0..ch {
        let plane = img.channel(c);
        let (m, v) = mean_var(plane.iter().copied());
        let (rm, rv) = mean_var((y0..y1).flat_map(|y| plane[y * w + x0..y * w + x1].iter().copied()));
        out.extend_from_slice(&[m, v, rm, rv]);
        for gy in 0..POOL_GRID {
            let (ry0, ry1) = (gy * h / POOL_GRID, ((gy + 1) * h / POOL_GRID).max(gy * h / POOL_GRID + 1).min(h));
            for gx in 0..POOL_GRID {
                let (rx0, rx1) = (gx * w / POOL_GRID, ((gx + 1) * w / POOL_GRID).max(gx * w / POOL_GRID + 1).min(w));
                let (pm, _) = mean_var((ry0..ry1).flat_map(|y| plane[y * w + rx0..y * w + rx1].iter().copied()));
                out.push(pm);
            }
        }
    }
    let area = ((x1 - x0) * (y1 - y0)) as f64 / (w * h).max(1) as f64;
    out.push(area);
    out
}
