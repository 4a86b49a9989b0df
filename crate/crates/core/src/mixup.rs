//! Balanced MixUp: convex pixel and label interpolation between an
//! instance-sampled and a class-sampled composite, with the coefficient
//! drawn from a Beta distribution.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, ChannelImage, CompositeSet, LabelVector};
use crate::pkcp::union_box;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixupConfig {
    pub enabled: bool,
    /// Beta shape parameters; the mixing coefficient itself is lambda.
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            alpha: 2.0,
            beta: 2.0,
            seed: 0,
        }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "mixup alpha and beta must be > 0 (got {}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    fn distribution(&self) -> Result<Beta<f64>> {
        self.validate()?;
        Beta::new(self.alpha, self.beta).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Draws one mixing coefficient in `[0, 1]`.
pub fn sample_lambda<R: Rng + ?Sized>(config: &MixupConfig, rng: &mut R) -> Result<f64> {
    Ok(config.distribution()?.sample(rng))
}

/// A mixed training sample; pixels are reals in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSample {
    pub image: ChannelImage<f64>,
    pub label: LabelVector,
    /// Union of both sources' boxes, when both have one.
    pub union_box: Option<BoundingBox>,
    pub lambda: f64,
}

/// `lambda * a + (1 - lambda) * b`, element-wise.
pub fn mix_values(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

/// Mixes two real images and their labels.
pub fn mix_images(
    a: &ChannelImage<f64>,
    label_a: &LabelVector,
    b: &ChannelImage<f64>,
    label_b: &LabelVector,
    lambda: f64,
) -> Result<(ChannelImage<f64>, LabelVector)> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "cannot mix {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if label_a.len() != label_b.len() {
        return Err(Error::Shape("labels over different class sets".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let (c, h, w) = a.shape();
    let image = ChannelImage::new(c, h, w, mix_values(a.data(), b.data(), lambda))?;
    let label = LabelVector::from_raw(mix_values(label_a.as_slice(), label_b.as_slice(), lambda));
    Ok((image, label))
}

/// Mixes two composites after lifting their pixels to `[0, 1]`.
pub fn mix(instance: &CompositeSet, class_pick: &CompositeSet, lambda: f64) -> Result<MixedSample> {
    let (image, label) = mix_images(
        &instance.channels.to_unit(),
        &instance.label,
        &class_pick.channels.to_unit(),
        &class_pick.label,
        lambda,
    )?;
    let union_box = match (instance.union_box, class_pick.union_box) {
        (Some(a), Some(b)) => Some(union_box(&[a, b])?),
        _ => None,
    };
    Ok(MixedSample {
        image,
        label,
        union_box,
        lambda,
    })
}

/// Instance-based and class-based samplers over a pool of labelled items.
#[derive(Debug, Clone)]
pub struct PairSampler {
    len: usize,
    by_class: Vec<Vec<usize>>,
}

impl PairSampler {
    /// `classes[i]` is the class index of pool item `i`; every one of
    /// `class_names` must own at least one item.
    pub fn new(classes: &[usize], class_names: &[&str]) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("cannot sample from an empty pool"));
        }
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, &c) in classes.iter().enumerate() {
            by_class
                .get_mut(c)
                .ok_or_else(|| Error::invalid(format!("item {i} has class index {c} outside the class set")))?
                .push(i);
        }
        if let Some(empty) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!(
                "class `{}` has no instances for class-based sampling",
                class_names[empty]
            )));
        }
        Ok(Self {
            len: classes.len(),
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Uniform over all items.
    pub fn sample_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.len)
    }

    /// Uniform over classes, then uniform within the class.
    pub fn sample_class_based<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let members = &self.by_class[rng.random_range(0..self.by_class.len())];
        members[rng.random_range(0..members.len())]
    }

    /// Independent (instance, class-based) index pair.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let i = self.sample_instance(rng);
        let c = self.sample_class_based(rng);
        (i, c)
    }
}

/// Draws an (instance, class-based) pair from `pool`.
pub fn sample_pair<'a, T, R: Rng + ?Sized>(pool: &'a [T], sampler: &PairSampler, rng: &mut R) -> Result<(&'a T, &'a T)> {
    if pool.len() != sampler.len() {
        return Err(Error::invalid(format!(
            "sampler built for {} items, pool has {}",
            sampler.len(),
            pool.len()
        )));
    }
    let (i, c) = sampler.sample_pair(rng);
    Ok((&pool[i], &pool[c]))
}
