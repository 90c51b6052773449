//! Classical models over handcrafted features: the gradient-boosted ensemble
//! and the random-forest baseline.

pub mod forest;
pub mod gbt;
