//! Evaluation: stratified folds, cross-validation orchestration, metrics,
//! rank statistics and saturation power-law fitting.

pub mod folds;
pub mod metrics;
pub mod powerlaw;
pub mod special;
pub mod cv;
pub mod report;
pub mod stats;
