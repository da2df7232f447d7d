//! Training harness: run configuration, pseudo-fake augmentation and the
//! Adam training loop with lowest-loss checkpoint selection.

mod augment;
mod config;
mod train;


pub use augment::{augment_sample, Augmented, Combo, Outcome};
pub use config::{ComboWeights, DataConfig, RunConfig};
pub use train::{num_workers, synth_train_set, train, EpochRecord, TrainOutput, WORKERS_ENV};
