//! Weakly supervised temporal language localization.
//!
//! Given per-frame video features and a sentence feature, the model scores a
//! fixed set of multi-scale temporal proposals. It is trained only from
//! video-sentence match labels: the per-proposal scores are summed into a
//! video-level match score, and the best proposal is used as a pseudo label
//! for an auxiliary refinement loss.
//!
//! Modules, bottom up:
//!
//! - [`autodiff`]: tensors and a reverse-mode graph.
//! - [`proposals`]: span enumeration and proposal features.
//! - [`model`]: the two-branch network; [`checkpoint`] stores its parameters.
//! - [`training`]: losses, negative sampling, SGD.
//! - [`metrics`]: temporal IoU, R@k and mIoU.
//! - [`features`], [`data`], [`synth`]: file formats, manifests and the
//!   synthetic planted-event corpus.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod proposals;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
