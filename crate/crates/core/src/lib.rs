//! Desk-scale laboratory for fine-grained temporal audio-visual deepfake
//! detection.
//!
//! The crate is organised bottom-up:
//!
//! * [`avdata`]: clip types, the synthetic correlated audio-visual generator
//!   and the `AVTC0001` binary tensor container.
//! * [`pseudofake`]: chunk selection and the temporal manipulation families
//!   (replace, repeat, flip, translate) used to build pseudo-fake pairs.
//! * [`tinynet`]: the differentiable primitives (convolutions, pooling,
//!   softmax, BCE, Adam) plus a finite-difference gradient checker.
//! * [`detector`]: the per-timestep distance map detector with cross-modal
//!   attention.
//! * [`trainloop`]: augmentation policy and the optimisation loop.
//! * [`evalkit`]: rank AUC, video-level evaluation and ablation runs.
//! * [`cli`]: the `avlab` command-line entry point.
//!
//! All temporal indices are 0-based.

pub mod avdata;
pub mod cli;
pub mod detector;
pub mod error;
pub mod evalkit;
pub mod pseudofake;
pub mod rng;
pub mod tinynet;
pub mod trainloop;

pub use error::{Error, Result};
