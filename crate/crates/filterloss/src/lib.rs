//! Training pipeline for imbalanced, label-noisy tabular classification.
//!
//! The crate covers the full loop: synthetic data generation and CSV
//! interchange, per-class similarity diagnostics, classical resamplers
//! (random over/under, SMOTE, ADASYN, Tomek links, ENN, OSS), an ensemble
//! filter that turns undersampler agreement into per-sample loss weights,
//! a family of weighted classification losses, a small residual MLP with
//! plain SGD, a transfer-style trainer (pretrain, freeze, fine-tune), and
//! a benchmark grid runner behind the `filterloss` binary.

pub mod analysis;
pub mod dataset;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod neighbors;
pub mod resampling;
pub mod trainer;
pub mod weight_filter;
