//! Semi-supervised learning laboratory for studying how pseudo-label training affects
//! different sub-populations.
//!
//! - [`data`]: sub-populated datasets, a Gaussian generator and CSV I/O
//! - [`model`]: softmax classifiers, losses and mini-batch SGD
//! - [`pseudolabel`]: augmentation, sharpening and pseudo-labeled datasets
//! - [`ssl`]: baseline, ideal, two-iteration and iterative training regimes
//! - [`metrics`]: benefit ratio and group statistics
//! - [`bounds`]: generalization-bound quantities and their enumeration checks
//! - [`mitigation`]: reweighting and labeled-data growth
//! - [`harness`]: config-driven experiments and report files

pub mod bounds;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod mitigation;
pub mod model;
pub mod pseudolabel;
pub mod rng;
pub mod ssl;

pub use error::{Error, Result};
