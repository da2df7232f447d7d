use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avdata::{synth_dataset, AVPair, AudioClip, DesyncMode, Label, TemporalSequence, VisualClip};
use crate::detector::{Detector, ModelInput};
use crate::error::{Error, Result};
use crate::rng::tag;
use crate::trainloop::RunConfig;

use super::auc;

pub const IN_DISTRIBUTION: &str = "in_distribution";
pub const FINE_GRAINED: &str = "fine_grained";

/// How clips are cut for scoring. Lengths are in video frames; `None`
/// means the model's input length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsequencePolicy {
    pub length: Option<usize>,
    pub stride: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredVideo {
    pub id: String,
    pub label: Label,
    pub subsequence_scores: Vec<f64>,
    pub video_score: f64,
    /// The clip was shorter than one subsequence and was zero-padded.
    pub padded: bool,
}

impl ScoredVideo {
    pub fn new(id: String, label: Label, subsequence_scores: Vec<f64>, padded: bool) -> Result<Self> {
        if subsequence_scores.is_empty() {
            return Err(Error::Usage(format!("video {id:?} has no subsequences")));
        }
        let video_score = subsequence_scores.iter().sum::<f64>() / subsequence_scores.len() as f64;
        Ok(ScoredVideo { id, label, subsequence_scores, video_score, padded })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub n_videos: usize,
    pub n_padded: usize,
    pub subsequence_length: usize,
    pub stride: usize,
    pub videos: Vec<ScoredVideo>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Summary line followed by an aligned per-video table.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "auc {:.4}  videos {}  padded {}  subsequence {} stride {}\n",
            self.auc, self.n_videos, self.n_padded, self.subsequence_length, self.stride
        );
        let w = self.videos.iter().map(|v| v.id.len()).max().unwrap_or(2).max(2);
        writeln!(s, "{:<w$}  {:<5}  {:>8}  {:>4}  padded", "id", "label", "score", "subs").unwrap();
        for v in &self.videos {
            let label = if v.label == Label::Fake { "fake" } else { "real" };
            writeln!(
                s,
                "{:<w$}  {:<5}  {:>8.5}  {:>4}  {}",
                v.id,
                label,
                v.video_score,
                v.subsequence_scores.len(),
                if v.padded { "yes" } else { "no" }
            )
            .unwrap();
        }
        s
    }
}

fn pad_visual(clip: &VisualClip, t: usize) -> Result<VisualClip> {
    let [_, c, h, w] = clip.shape();
    let mut data = clip.data().to_vec();
    data.resize(t * c * h * w, 0.0);
    VisualClip::new([t, c, h, w], data)
}

fn pad_audio(clip: &AudioClip, n: usize) -> Result<AudioClip> {
    let mut data = clip.data().to_vec();
    data.resize(n, 0.0);
    AudioClip::new(data)
}

fn score_video(det: &Detector<f32>, pair: &AVPair, length: usize, stride: usize) -> Result<ScoredVideo> {
    let spf = det.input_shape().t_a / det.input_shape().t_v;
    if pair.samples_per_frame() != spf {
        return Err(Error::Shape(format!(
            "video {:?} has {} audio samples per frame, the model expects {spf}",
            pair.meta.source_id,
            pair.samples_per_frame()
        )));
    }
    let t = pair.visual.steps();
    let windows: Vec<(VisualClip, AudioClip)> = if t < length {
        vec![(pad_visual(&pair.visual, length)?, pad_audio(&pair.audio, length * spf)?)]
    } else {
        (0..=(t - length) / stride)
            .map(|k| {
                let s = k * stride;
                Ok((pair.visual.slice(s, length)?, pair.audio.slice(s * spf, length * spf)?))
            })
            .collect::<Result<_>>()?
    };
    let scores = windows
        .iter()
        .map(|(v, a)| Ok(det.forward(&ModelInput::from_clips(v, a)?)?.y as f64))
        .collect::<Result<_>>()?;
    ScoredVideo::new(pair.meta.source_id.clone(), pair.label, scores, t < length)
}

/// Score every video as the mean over its subsequences and report the
/// video-level AUC.
pub fn evaluate(det: &Detector<f32>, eval_set: &[AVPair], policy: &SubsequencePolicy) -> Result<EvalReport> {
    if eval_set.is_empty() {
        return Err(Error::Usage("empty evaluation set".into()));
    }
    let length = policy.length.unwrap_or(det.input_shape().t_v);
    let stride = policy.stride.unwrap_or(length);
    if length != det.input_shape().t_v || stride == 0 {
        return Err(Error::Config(format!(
            "subsequence length {length} must equal the model input length {} and stride {stride} must be >= 1",
            det.input_shape().t_v
        )));
    }
    let videos: Vec<ScoredVideo> =
        eval_set.par_iter().map(|p| score_video(det, p, length, stride)).collect::<Result<_>>()?;
    let pairs: Vec<(f64, Label)> = videos.iter().map(|v| (v.video_score, v.label)).collect();
    Ok(EvalReport {
        auc: auc(&pairs)?,
        n_videos: videos.len(),
        n_padded: videos.iter().filter(|v| v.padded).count(),
        subsequence_length: length,
        stride,
        videos,
    })
}

/// A named evaluation set.
#[derive(Debug, Clone)]
pub struct EvalSplit {
    pub name: String,
    pub pairs: Vec<AVPair>,
}

/// The two synthetic eval splits: global-desync fakes and short
/// local-desync fakes, each mixed with fresh reals.
pub fn synth_eval_splits(cfg: &RunConfig) -> Result<Vec<EvalSplit>> {
    let d = &cfg.data;
    let synth = cfg.synth.lengthened(d.eval_length_factor);
    let fine = DesyncMode::LocalDesync { chunk: d.fine_grained_chunk };
    Ok(vec![
        EvalSplit {
            name: IN_DISTRIBUTION.into(),
            pairs: synth_dataset(&synth, d.n_eval, d.eval_fake_fraction, &DesyncMode::GlobalDesync, tag::SYNTH_EVAL, "eval-id")?,
        },
        EvalSplit {
            name: FINE_GRAINED.into(),
            pairs: synth_dataset(&synth, d.n_eval, d.eval_fake_fraction, &fine, tag::SYNTH_EVAL_FINE, "eval-fg")?,
        },
    ])
}
