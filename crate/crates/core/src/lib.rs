//! Multi-phase CT lesion pipeline: phase-wise K-slice Cartesian product
//! recombination, balanced MixUp, a two-stage benign/malignant diagnosis
//! pipeline and the evaluation and ablation harness around it.
//!
//! Parallel work goes through [`exec::Execution`]; with the `parallel`
//! feature disabled every stage runs sequentially and produces the same
//! bytes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cohort;
pub mod diagnosis;
pub mod error;
pub mod exec;
pub mod harness;
pub mod metrics;
pub mod mixup;
pub mod model;
pub mod pkcp;
pub mod rng;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{
    BoundingBox, Branch, ChannelImage, CompositeSet, GrayImage, LabelVector, LeafClass, Phase,
    Slice, SliceGrid,
};
