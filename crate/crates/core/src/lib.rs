//! Style augmentation for small-data segmentation: data ingestion and
//! synthetic texture-shift sets, a conditional-instance-norm stylizer with a
//! Gaussian style prior, mask-preserving batch augmentation, a compact
//! UNeXt-style network, training, Monte-Carlo dropout evaluation and paired
//! experiment runs.

pub mod augment;
pub mod container;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod nn;
pub mod segnet;
pub mod stylizer;
pub mod trainer;

pub use error::{Error, Result};
