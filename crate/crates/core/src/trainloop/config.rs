use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::avdata::{DesyncMode, SynthConfig};
use crate::detector::{DetectorConfig, InputShape};
use crate::error::{Error, Result};
use crate::pseudofake::{ChunkParams, KindPolicy};
use crate::tinynet::AdamConfig;

/// Probabilities of the three pseudo-fake compositions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComboWeights {
    /// Real visual, manipulated audio.
    pub audio_only: f64,
    /// Manipulated visual, real audio.
    pub visual_only: f64,
    pub both: f64,
}

impl Default for ComboWeights {
    fn default() -> Self {
        ComboWeights { audio_only: 1.0 / 3.0, visual_only: 1.0 / 3.0, both: 1.0 / 3.0 }
    }
}

/// Synthetic dataset sizes and the fake populations of each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub train_fake_fraction: f64,
    pub train_fake_mode: DesyncMode,
    pub n_eval: usize,
    pub eval_fake_fraction: f64,
    /// Chunk law of the local-desync fakes in the fine-grained eval split.
    pub fine_grained_chunk: ChunkParams,
    /// Eval clips are this many model inputs long.
    pub eval_length_factor: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 400,
            train_fake_fraction: 0.5,
            train_fake_mode: DesyncMode::GlobalDesync,
            n_eval: 200,
            eval_fake_fraction: 0.5,
            fine_grained_chunk: ChunkParams { r_min: 0.125, r_max: 0.25, hard_min: 2 },
            eval_length_factor: 1,
        }
    }
}

/// Every knob of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub pseudo_fake_prob: f64,
    pub combo_weights: ComboWeights,
    pub kind_policy: KindPolicy,
    pub chunk: ChunkParams,
    pub detector: DetectorConfig,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: 50,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 1e-5,
            pseudo_fake_prob: 0.5,
            combo_weights: ComboWeights::default(),
            kind_policy: KindPolicy::default(),
            chunk: ChunkParams::default(),
            detector: DetectorConfig::default(),
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

fn unit(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{name}={p} must lie in [0, 1]")));
    }
    Ok(())
}

impl RunConfig {
    pub fn input_shape(&self) -> InputShape {
        let s = &self.synth;
        InputShape { t_v: s.t_v, c_v: s.c_v, h: s.h, w: s.w, t_a: s.t_a }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0 && self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("lr={} and weight_decay={} must be finite and >= 0", self.lr, self.weight_decay)));
        }
        unit("pseudo_fake_prob", self.pseudo_fake_prob)?;
        let c = &self.combo_weights;
        for (name, w) in [("audio_only", c.audio_only), ("visual_only", c.visual_only), ("both", c.both)] {
            unit(&format!("combo_weights.{name}"), w)?;
        }
        if (c.audio_only + c.visual_only + c.both - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("combo_weights must sum to 1, got {c:?}")));
        }
        unit("data.train_fake_fraction", self.data.train_fake_fraction)?;
        unit("data.eval_fake_fraction", self.data.eval_fake_fraction)?;
        if self.data.eval_length_factor == 0 {
            return Err(Error::Config("data.eval_length_factor must be >= 1".into()));
        }
        self.kind_policy.validate()?;
        self.chunk.validate()?;
        self.data.fine_grained_chunk.validate()?;
        self.synth.validate()?;
        self.detector.validate(&self.input_shape())
    }
}
