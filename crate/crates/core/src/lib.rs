//! Pose-guided person image synthesis.
//!
//! A frozen backbone turns a source image into an appearance descriptor; a
//! residual generator maps `(descriptor, target pose)` to an image of the
//! same person in the new pose; a dual-head discriminator judges realness
//! and identity during training.

pub mod augment;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pose;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
