//! Geometric augmentation: random rotation (nearest neighbour, zero fill)
//! followed by an optional horizontal flip, applied identically to every
//! channel and to the lesion box.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{BoundingBox, ChannelImage, CompositeSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraditionalAugConfig {
    /// Rotation angle is drawn uniformly from `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    pub flip_probability: f64,
}

impl Default for TraditionalAugConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 15.0,
            flip_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricTransform {
    pub angle_deg: f64,
    pub flip: bool,
}

impl GeometricTransform {
    pub const IDENTITY: GeometricTransform = GeometricTransform {
        angle_deg: 0.0,
        flip: false,
    };

    pub fn sample<R: Rng + ?Sized>(cfg: &TraditionalAugConfig, rng: &mut R) -> Self {
        let max = cfg.max_rotation_deg.abs();
        let angle_deg = if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
        let flip = rng.random_bool(cfg.flip_probability.clamp(0.0, 1.0));
        Self { angle_deg, flip }
    }

    /// Source pixel feeding destination pixel `(x, y)`, if inside the image.
    fn source_of(&self, x: usize, y: usize, w: usize, h: usize) -> Option<(usize, usize)> {
        // undo the flip first: it is applied after the rotation
        let x = if self.flip { w - 1 - x } else { x };
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let sx = c * dx + s * dy + cx;
        let sy = -s * dx + c * dy + cy;
        let (fx, fy) = (sx.floor(), sy.floor());
        (fx >= 0.0 && fy >= 0.0 && fx < w as f64 && fy < h as f64).then_some((fx as usize, fy as usize))
    }

    pub fn apply_image<T: Copy + Default>(&self, img: &ChannelImage<T>) -> ChannelImage<T> {
        let (ch, h, w) = img.shape();
        let mut out = ChannelImage::filled(ch, h, w, T::default());
        for y in 0..h {
            for x in 0..w {
                if let Some((sx, sy)) = self.source_of(x, y, w, h) {
                    for c in 0..ch {
                        out.set(c, x, y, img.get(c, sx, sy));
                    }
                }
            }
        }
        out
    }

    /// Box enclosing the transformed box corners, clipped to the image.
    pub fn apply_box(&self, b: &BoundingBox, w: usize, h: usize) -> Option<BoundingBox> {
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let corners = [
            (b.x_min, b.y_min),
            (b.x_max, b.y_min),
            (b.x_min, b.y_max),
            (b.x_max, b.y_max),
        ];
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for (x, y) in corners {
            let (dx, dy) = (f64::from(x) - cx, f64::from(y) - cy);
            let (rx, ry) = (c * dx - s * dy + cx, s * dx + c * dy + cy);
            x0 = x0.min(rx);
            y0 = y0.min(ry);
            x1 = x1.max(rx);
            y1 = y1.max(ry);
        }
        let clip = |v: f64, hi: usize| v.clamp(0.0, hi as f64) as u32;
        let (mut bx0, by0, mut bx1, by1) = (
            clip(x0.floor(), w),
            clip(y0.floor(), h),
            clip(x1.ceil(), w),
            clip(y1.ceil(), h),
        );
        if self.flip {
            (bx0, bx1) = (w as u32 - bx1, w as u32 - bx0);
        }
        BoundingBox::new(bx0, by0, bx1, by1).ok()
    }
}

/// Applies one random geometric transform to every channel and to the
/// union box; the label is unchanged.
pub fn apply_traditional_aug<R: Rng + ?Sized>(
    composite: &CompositeSet,
    cfg: &TraditionalAugConfig,
    rng: &mut R,
) -> CompositeSet {
    let t = GeometricTransform::sample(cfg, rng);
    apply_transform(composite, &t)
}

pub fn apply_transform(composite: &CompositeSet, t: &GeometricTransform) -> CompositeSet {
    let (_, h, w) = composite.channels.shape();
    CompositeSet {
        channels: t.apply_image(&composite.channels),
        union_box: composite.union_box.and_then(|b| t.apply_box(&b, w, h)),
        ..composite.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LabelVector, LeafClass, Phase};
    use crate::rng;

    fn composite(w: usize, h: usize) -> CompositeSet {
        let data = (0..2 * w * h).map(|i| (i % 251) as u8).collect();
        CompositeSet {
            report_id: "r".into(),
            patient_id: "p".into(),
            phases: vec![Phase::Ap, Phase::Dp],
            source_indices: vec![1, 1],
            channels: ChannelImage::new(2, h, w, data).unwrap(),
            union_box: Some(BoundingBox::new(1, 0, 3, 2).unwrap()),
            class_label: LeafClass::HH,
            label: LabelVector::leaf(LeafClass::HH),
        }
    }

    #[test]
    fn zero_rotation_no_flip_is_identity() {
        let c = composite(10, 6);
        assert_eq!(apply_transform(&c, &GeometricTransform::IDENTITY), c);
    }

    #[test]
    fn horizontal_flip_reflects_box_and_pixels() {
        let c = composite(10, 6);
        let t = GeometricTransform {
            angle_deg: 0.0,
            flip: true,
        };
        let out = apply_transform(&c, &t);
        assert_eq!(out.union_box.unwrap().as_array(), [7, 0, 9, 2]);
        for y in 0..6 {
            for x in 0..10 {
                assert_eq!(out.channels.get(1, x, y), c.channels.get(1, 9 - x, y));
            }
        }
    }

    #[test]
    fn rotation_moves_all_channels_together() {
        let (w, h) = (24, 24);
        let mut c = composite(w, h);
        c.channels = ChannelImage::filled(3, h, w, 0u8);
        for ch in 0..3 {
            c.channels.set(ch, 15, 7, 255);
            c.channels.set(ch, 6, 18, 200);
        }
        let mut r = rng::stream(9, &[]);
        for _ in 0..20 {
            let out = apply_traditional_aug(&c, &TraditionalAugConfig::default(), &mut r);
            assert_eq!(out.channels.shape(), c.channels.shape());
            assert_eq!(out.label, c.label);
            for y in 0..h {
                for x in 0..w {
                    let v = out.channels.get(0, x, y);
                    assert_eq!(out.channels.get(1, x, y), v);
                    assert_eq!(out.channels.get(2, x, y), v);
                }
            }
        }
    }

    #[test]
    fn rotated_box_covers_rotated_pixels() {
        let (w, h) = (32, 32);
        let b = BoundingBox::new(10, 12, 18, 20).unwrap();
        let mut img = ChannelImage::filled(1, h, w, 0u8);
        for y in 12..20 {
            for x in 10..18 {
                img.set(0, x, y, 1);
            }
        }
        for angle in [-15.0, -7.5, 3.0, 15.0] {
            for flip in [false, true] {
                let t = GeometricTransform { angle_deg: angle, flip };
                let out = t.apply_image(&img);
                let tb = t.apply_box(&b, w, h).unwrap();
                for y in 0..h {
                    for x in 0..w {
                        if out.get(0, x, y) == 1 {
                            assert!(tb.contains_pixel(x, y), "angle {angle} flip {flip} pixel ({x},{y}) outside {tb}");
                        }
                    }
                }
            }
        }
    }
}
