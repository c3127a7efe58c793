//! Physics-informed inertial dead reckoning.
//!
//! The crate bundles a strapdown INS mechanization in the local-level NED
//! frame, a synthetic trajectory and IMU generator, CSV ingestion, a small
//! fully connected network trained on a composite data + strapdown-physics
//! objective, and trajectory error metrics.

pub mod cli;
pub mod dataset;
pub mod dual;
pub mod error;
pub mod frames;
pub mod loss;
pub mod mechanization;
pub mod metrics;
pub mod network;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
