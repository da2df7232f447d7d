//! Audio-visual sync detector built on [`crate::tinynet`].

mod config;
pub mod gradcheck;
mod model;

pub use config::{AudioBlock, DetectorConfig, InputShape, VisualBlock};
pub use model::{config_hash, distance_map, distance_map_backward, Detector, FeatureMap, Forward, ModelInput};
