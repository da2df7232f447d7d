//! Audio-visual data model, synthetic correlated generator and the
//! `AVTC0001` tensor container.

mod container;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudofake::ManipulationSpec;

pub use container::{
    decode_container, encode_container, read_container, write_container, Container, NamedTensor,
    MAGIC,
};
pub use synth::{
    draw_envelope, render_pair, synth_dataset, synth_fake_pair, synth_real_pair, DesyncMode,
    PairDraws, SynthConfig,
};

/// A sequence indexed by time, where each time step is a contiguous block of
/// `step_len` floats (a frame for video, a single sample for audio).
pub trait TemporalSequence: Clone {
    fn steps(&self) -> usize;
    fn step_len(&self) -> usize;
    fn raw(&self) -> &[f32];
    fn raw_mut(&mut self) -> &mut [f32];

    fn step(&self, t: usize) -> &[f32] {
        let n = self.step_len();
        &self.raw()[t * n..(t + 1) * n]
    }
}

/// Video clip stored as `(T, C, H, W)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualClip {
    shape: [usize; 4],
    data: Vec<f32>,
}

impl VisualClip {
    pub fn new(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) || shape[0] < 2 {
            return Err(Error::Shape(format!(
                "visual clip shape {shape:?} needs T >= 2 and positive dims"
            )));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "visual clip shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("visual value {v} outside [0, 1]")));
        }
        Ok(VisualClip { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        VisualClip {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mean intensity of every frame.
    pub fn frame_means(&self) -> Vec<f64> {
        (0..self.steps())
            .map(|t| self.step(t).iter().map(|&v| v as f64).sum::<f64>() / self.step_len() as f64)
            .collect()
    }

    /// Frames `[start, start + len)` as a new clip.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let n = self.step_len();
        let data = self
            .data
            .get(start * n..(start + len) * n)
            .ok_or_else(|| Error::Shape(format!("frames {start}..{} out of range", start + len)))?
            .to_vec();
        let [_, c, h, w] = self.shape;
        VisualClip::new([len, c, h, w], data)
    }
}

impl TemporalSequence for VisualClip {
    fn steps(&self) -> usize {
        self.shape[0]
    }
    fn step_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }
    fn raw(&self) -> &[f32] {
        &self.data
    }
    fn raw_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Mono waveform with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    data: Vec<f32>,
}

impl AudioClip {
    pub fn new(data: Vec<f32>) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Shape(format!("audio clip needs >= 2 samples, got {}", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("audio value {v} outside [-1, 1]")));
        }
        Ok(AudioClip { data })
    }

    pub fn zeros(len: usize) -> Self {
        AudioClip { data: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// RMS over consecutive blocks of `block` samples.
    pub fn block_rms(&self, block: usize) -> Vec<f64> {
        self.data
            .chunks_exact(block)
            .map(|c| (c.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / block as f64).sqrt())
            .collect()
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let data = self
            .data
            .get(start..start + len)
            .ok_or_else(|| Error::Shape(format!("samples {start}..{} out of range", start + len)))?
            .to_vec();
        AudioClip::new(data)
    }
}

impl TemporalSequence for AudioClip {
    fn steps(&self) -> usize {
        self.data.len()
    }
    fn step_len(&self) -> usize {
        1
    }
    fn raw(&self) -> &[f32] {
        &self.data
    }
    fn raw_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// Fake is the positive class.
    pub fn target(self) -> f64 {
        match self {
            Label::Real => 0.0,
            Label::Fake => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

/// How a pair came to be, before any pseudo-fake augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Real,
    /// Visual and audio rendered from independent envelopes.
    GlobalDesync,
    /// One modality's envelope replaced on frames `[start, start + len)`.
    LocalDesync {
        modality: Modality,
        start: usize,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub source_id: String,
    pub origin: Origin,
    #[serde(default)]
    pub visual_manipulations: Vec<ManipulationSpec>,
    #[serde(default)]
    pub audio_manipulations: Vec<ManipulationSpec>,
}

impl PairMeta {
    pub fn real(source_id: impl Into<String>) -> Self {
        PairMeta {
            source_id: source_id.into(),
            origin: Origin::Real,
            visual_manipulations: Vec::new(),
            audio_manipulations: Vec::new(),
        }
    }

    pub fn is_manipulated(&self) -> bool {
        !self.visual_manipulations.is_empty() || !self.audio_manipulations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AVPair {
    pub visual: VisualClip,
    pub audio: AudioClip,
    pub label: Label,
    pub meta: PairMeta,
}

impl AVPair {
    /// Audio samples per video frame; the two streams are aligned by this
    /// uniform ratio.
    pub fn samples_per_frame(&self) -> usize {
        self.audio.len() / self.visual.steps()
    }

    /// `label == fake` exactly when the pair was synthesised as a fake or
    /// carries at least one manipulation record.
    pub fn label_is_sound(&self) -> bool {
        let fake_evidence = self.meta.is_manipulated() || self.meta.origin != Origin::Real;
        (self.label == Label::Fake) == fake_evidence
    }

    pub fn to_container(&self) -> Result<Container> {
        let [t, c, h, w] = self.visual.shape();
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("label".to_string(), serde_json::to_string(&self.label)?);
        meta.insert("meta".to_string(), serde_json::to_string(&self.meta)?);
        Ok(Container {
            tensors: vec![
                NamedTensor::new("visual", vec![t, c, h, w], self.visual.data().to_vec())?,
                NamedTensor::new("audio", vec![self.audio.len()], self.audio.data().to_vec())?,
            ],
            meta,
        })
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let label: Label = serde_json::from_str(c.meta_value("label")?)?;
        let meta: PairMeta = serde_json::from_str(c.meta_value("meta")?)?;
        let visual = c.tensor("visual")?;
        let shape: [usize; 4] = visual
            .shape
            .as_slice()
            .try_into()
            .map_err(|_| Error::Shape(format!("visual tensor has shape {:?}", visual.shape)))?;
        let visual = VisualClip::new(shape, visual.data.clone())?;
        let audio = AudioClip::new(c.tensor("audio")?.data.clone())?;
        Ok(AVPair {
            visual,
            audio,
            label,
            meta,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let c = self.to_container()?;
        write_container(path, &c.tensors, &c.meta)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (tensors, meta) = read_container(path)?;
        AVPair::from_container(Container { tensors, meta })
    }
}
