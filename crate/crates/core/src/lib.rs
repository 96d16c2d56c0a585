//! Contrastive representation training and out-of-distribution scoring.

pub mod data;
pub mod encoder;
pub mod harness;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod rng;
pub mod scorers;
