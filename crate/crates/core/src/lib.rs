//! Learning with open-set noisy labels.
//!
//! The crate bundles everything needed to study sample selection under
//! open-set label noise at desk scale:
//!
//! - [`tensor`]: dense `f64` tensors on a reverse-mode tape
//! - [`nn`]: MLP classifier, Adam, checkpoints
//! - [`data`]: synthetic grids, out-of-distribution sources, splits, the dataset file format
//! - [`noise`]: Type I replacement and Type II image corruptions
//! - [`select`]: the keep-rate schedule, small-loss selection and the self-teach loop
//! - [`attack`]: targeted PGD instance correction
//! - [`pipeline`]: warmup, partition, correction and mixed-objective retraining, plus baselines
//! - [`experiment`]: config files, metrics streams, campaigns and ablations
//! - [`verify`]: executable acceptance checks shared by the CLI and the test suite

pub mod attack;
pub mod data;
mod codec;
mod error;
pub mod experiment;
pub mod nn;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod select;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
