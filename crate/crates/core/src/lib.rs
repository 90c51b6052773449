//! EEG pathology screening toolkit.
//!
//! The pipeline runs EDF ingestion, signal preprocessing, handcrafted and
//! learned feature extraction, a family of classical and multiple-instance
//! neural models, stratified cross-validation with rank statistics, and
//! saturation power-law scaling analysis. Synthetic corpora make the whole
//! chain verifiable at desk scale.

use mimalloc::MiMalloc;

// Training allocates and frees large activation buffers at high rate; the
// default allocator returns them to the kernel each time and the page
// faults dominate the convolution cost.
#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

pub mod autodiff;
pub mod classical;
pub mod config;
pub mod edf;
pub mod eval;
pub mod features;
pub mod meta;
pub mod neural;
pub mod pipeline;
pub mod preprocess;
pub mod synth;
