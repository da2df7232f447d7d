//! Synthetic correlated audio-visual pairs.
//!
//! A latent envelope `e ∈ [0, 1]` drives both streams: the brightness of a
//! Gaussian blob in the video and the amplitude of a fixed-frequency carrier
//! in the audio. Real pairs share one envelope; fakes break the coupling
//! globally (independent envelopes) or on a chunk of frames.
//!
//! The envelope lives at audio resolution; a frame's envelope value is the
//! mean over that frame's `t_a / t_v` samples, so manipulating whole frames
//! of the envelope never leaks across frame boundaries.

use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudofake::{sample_chunk, ChunkParams};
use crate::rng::{self, Rng};

use super::{AVPair, AudioClip, Label, Modality, Origin, PairMeta, VisualClip};

/// Carrier frequency in cycles per audio sample.
pub const CARRIER_FREQ: f64 = 0.125;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub t_v: usize,
    pub c_v: usize,
    pub h: usize,
    pub w: usize,
    pub t_a: usize,
    /// Upper bound on envelope frequency, in cycles per clip; also the number
    /// of sinusoids mixed (rounded up).
    pub envelope_bandwidth: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            t_v: 16,
            c_v: 1,
            h: 32,
            w: 32,
            t_a: 1600,
            envelope_bandwidth: 3.0,
            noise_std: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_v == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::Config(format!(
                "visual dims must be positive: c_v={} h={} w={}",
                self.c_v, self.h, self.w
            )));
        }
        if self.t_v < 2 || self.t_a < 2 {
            return Err(Error::Config(format!(
                "need t_v >= 2 and t_a >= 2, got t_v={} t_a={}",
                self.t_v, self.t_a
            )));
        }
        if self.t_a % self.t_v != 0 {
            return Err(Error::Config(format!(
                "t_a={} is not a multiple of t_v={}",
                self.t_a, self.t_v
            )));
        }
        if !(self.envelope_bandwidth.is_finite() && self.envelope_bandwidth >= 0.0) {
            return Err(Error::Config(format!(
                "envelope_bandwidth must be finite and >= 0, got {}",
                self.envelope_bandwidth
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    pub fn samples_per_frame(&self) -> usize {
        self.t_a / self.t_v
    }

    pub fn visual_shape(&self) -> [usize; 4] {
        [self.t_v, self.c_v, self.h, self.w]
    }

    /// Same content parameters, `factor` times longer in time.
    pub fn lengthened(&self, factor: usize) -> Self {
        SynthConfig {
            t_v: self.t_v * factor,
            t_a: self.t_a * factor,
            envelope_bandwidth: self.envelope_bandwidth * factor as f64,
            ..self.clone()
        }
    }
}

/// Smooth envelope at audio resolution: a mix of `ceil(bandwidth)`
/// sinusoids with frequencies in `(0, bandwidth]` cycles per clip, min-max
/// normalised to `[0, 1]`. A degenerate (constant) mix maps to 0.5.
pub fn draw_envelope(cfg: &SynthConfig, rng: &mut Rng) -> Vec<f32> {
    let k = cfg.envelope_bandwidth.ceil() as usize;
    let comps: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| {
            let freq = cfg.envelope_bandwidth * (1.0 - rng.random::<f64>());
            let amp = rng.random_range(0.5..1.0);
            let phase = rng.random_range(0.0..TAU);
            (freq, amp, phase)
        })
        .collect();
    let n = cfg.t_a as f64;
    let raw: Vec<f64> = (0..cfg.t_a)
        .map(|s| {
            let x = (s as f64 + 0.5) / n;
            comps.iter().map(|&(f, a, p)| a * (TAU * f * x + p).sin()).sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12) {
        return vec![0.5; cfg.t_a];
    }
    raw.iter().map(|&v| ((v - lo) / (hi - lo)) as f32).collect()
}

/// Every random quantity behind one real pair, drawn in a fixed order.
#[derive(Debug, Clone)]
pub struct PairDraws {
    pub envelope: Vec<f32>,
    pub blob_center: (f64, f64),
    pub blob_sigma: f64,
    pub channel_gain: Vec<f64>,
    pub carrier_phase: f64,
    pub visual_noise: Vec<f32>,
    pub audio_noise: Vec<f32>,
}

impl PairDraws {
    pub fn sample(cfg: &SynthConfig, rng: &mut Rng) -> Self {
        let envelope = draw_envelope(cfg, rng);
        let (h, w) = (cfg.h as f64, cfg.w as f64);
        let blob_center = (rng.random_range(0.3..0.7) * h, rng.random_range(0.3..0.7) * w);
        let blob_sigma = rng.random_range(0.15..0.3) * h.min(w);
        let channel_gain = (0..cfg.c_v).map(|_| rng.random_range(0.6..1.0)).collect();
        let carrier_phase = rng.random_range(0.0..TAU);
        let nv = cfg.t_v * cfg.c_v * cfg.h * cfg.w;
        let visual_noise = (&mut *rng).sample_iter(StandardNormal).take(nv).collect();
        let audio_noise = (&mut *rng).sample_iter(StandardNormal).take(cfg.t_a).collect();
        PairDraws {
            envelope,
            blob_center,
            blob_sigma,
            channel_gain,
            carrier_phase,
            visual_noise,
            audio_noise,
        }
    }
}

/// Render both streams from explicit envelopes (each of length `t_a`).
pub fn render_pair(
    cfg: &SynthConfig,
    draws: &PairDraws,
    visual_envelope: &[f32],
    audio_envelope: &[f32],
) -> Result<(VisualClip, AudioClip)> {
    cfg.validate()?;
    if visual_envelope.len() != cfg.t_a || audio_envelope.len() != cfg.t_a {
        return Err(Error::Config(format!(
            "envelopes must have t_a={} samples, got {} and {}",
            cfg.t_a,
            visual_envelope.len(),
            audio_envelope.len()
        )));
    }
    let spf = cfg.samples_per_frame();
    let noise = cfg.noise_std as f32;
    let (cy, cx) = draws.blob_center;
    let inv = 1.0 / (2.0 * draws.blob_sigma * draws.blob_sigma);
    let blob: Vec<f32> = (0..cfg.h)
        .flat_map(|y| {
            (0..cfg.w).map(move |x| {
                let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                (-(dy * dy + dx * dx) * inv).exp() as f32
            })
        })
        .collect();

    let plane = cfg.h * cfg.w;
    let mut vis = Vec::with_capacity(cfg.t_v * cfg.c_v * plane);
    for t in 0..cfg.t_v {
        let e = visual_envelope[t * spf..(t + 1) * spf].iter().map(|&v| v as f64).sum::<f64>() / spf as f64;
        for c in 0..cfg.c_v {
            let scale = (e * draws.channel_gain[c]) as f32;
            let base = (t * cfg.c_v + c) * plane;
            for (p, &g) in blob.iter().enumerate() {
                let v = scale * g + noise * draws.visual_noise[base + p];
                vis.push(v.clamp(0.0, 1.0));
            }
        }
    }

    let audio = (0..cfg.t_a)
        .map(|s| {
            let carrier = (TAU * CARRIER_FREQ * s as f64 + draws.carrier_phase).sin() as f32;
            (audio_envelope[s] * carrier + noise * draws.audio_noise[s]).clamp(-1.0, 1.0)
        })
        .collect();

    Ok((VisualClip::new(cfg.visual_shape(), vis)?, AudioClip::new(audio)?))
}

pub fn synth_real_pair(cfg: &SynthConfig, rng: &mut Rng) -> Result<AVPair> {
    cfg.validate()?;
    let draws = PairDraws::sample(cfg, rng);
    let (visual, audio) = render_pair(cfg, &draws, &draws.envelope, &draws.envelope)?;
    Ok(AVPair {
        visual,
        audio,
        label: Label::Real,
        meta: PairMeta::real("synth"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DesyncMode {
    /// Visual and audio from two independent envelopes.
    GlobalDesync,
    /// One modality's envelope replaced on a chunk of frames drawn with
    /// `sample_chunk(t_v, chunk)`.
    LocalDesync { chunk: ChunkParams },
}

pub fn synth_fake_pair(cfg: &SynthConfig, mode: &DesyncMode, rng: &mut Rng) -> Result<AVPair> {
    cfg.validate()?;
    let draws = PairDraws::sample(cfg, rng);
    let (visual, audio, origin) = match mode {
        DesyncMode::GlobalDesync => {
            let other = draw_envelope(cfg, rng);
            let (v, a) = render_pair(cfg, &draws, &draws.envelope, &other)?;
            (v, a, Origin::GlobalDesync)
        }
        DesyncMode::LocalDesync { chunk } => {
            let (start, len) = sample_chunk(cfg.t_v, chunk, rng)?;
            let modality = if rng.random_bool(0.5) {
                Modality::Visual
            } else {
                Modality::Audio
            };
            let other = draw_envelope(cfg, rng);
            let spf = cfg.samples_per_frame();
            let mut spliced = draws.envelope.clone();
            let span = start * spf..(start + len) * spf;
            spliced[span.clone()].copy_from_slice(&other[span]);
            let (v, a) = match modality {
                Modality::Visual => render_pair(cfg, &draws, &spliced, &draws.envelope)?,
                Modality::Audio => render_pair(cfg, &draws, &draws.envelope, &spliced)?,
            };
            (v, a, Origin::LocalDesync { modality, start, len })
        }
    };
    Ok(AVPair {
        visual,
        audio,
        label: Label::Fake,
        meta: PairMeta {
            source_id: "synth".into(),
            origin,
            visual_manipulations: Vec::new(),
            audio_manipulations: Vec::new(),
        },
    })
}

/// `n` pairs, of which `round(n * fake_fraction)` are fakes of `mode`,
/// spread evenly through the index range. Pair `k` is drawn from its own
/// stream `(cfg.seed, stream_tag, k)` and named `"{prefix}-{k:05}"`.
pub fn synth_dataset(
    cfg: &SynthConfig,
    n: usize,
    fake_fraction: f64,
    mode: &DesyncMode,
    stream_tag: u64,
    prefix: &str,
) -> Result<Vec<AVPair>> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&fake_fraction) {
        return Err(Error::Config(format!("fake_fraction {fake_fraction} outside [0, 1]")));
    }
    let n_fake = (n as f64 * fake_fraction).round() as usize;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng::stream(cfg.seed, &[stream_tag, k as u64]);
            let is_fake = (k + 1) * n_fake / n.max(1) > k * n_fake / n.max(1);
            let mut pair = if is_fake {
                synth_fake_pair(cfg, mode, &mut rng)?
            } else {
                synth_real_pair(cfg, &mut rng)?
            };
            pair.meta.source_id = format!("{prefix}-{k:05}");
            Ok(pair)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avdata::TemporalSequence;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn toy() -> SynthConfig {
        SynthConfig {
            t_v: 16,
            c_v: 1,
            h: 16,
            w: 16,
            t_a: 1600,
            noise_std: 0.0,
            seed: 7,
            ..Default::default()
        }
    }

    fn brightness_vs_rms(p: &AVPair) -> f64 {
        pearson(&p.visual.frame_means(), &p.audio.block_rms(p.samples_per_frame()))
    }

    #[test]
    fn constant_envelope_gives_pure_carrier() {
        let cfg = SynthConfig { envelope_bandwidth: 0.0, ..toy() };
        let mut rng = rng::seeded(1);
        let draws = PairDraws::sample(&cfg, &mut rng);
        assert!(draws.envelope.iter().all(|&e| e == 0.5));
        let (_, audio) = render_pair(&cfg, &draws, &draws.envelope, &draws.envelope).unwrap();
        for (s, &v) in audio.data().iter().enumerate() {
            let carrier = (TAU * CARRIER_FREQ * s as f64 + draws.carrier_phase).sin() as f32;
            assert_eq!(v, 0.5 * carrier);
        }
        let peak = audio.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak <= 0.5 && peak > 0.45, "peak = {peak}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = toy();
        let a = synth_real_pair(&cfg, &mut rng::seeded(cfg.seed)).unwrap();
        let b = synth_real_pair(&cfg, &mut rng::seeded(cfg.seed)).unwrap();
        assert_eq!(a, b);
        let c = synth_real_pair(&cfg, &mut rng::seeded(cfg.seed + 1)).unwrap();
        assert_ne!(a.audio, c.audio);
    }

    #[test]
    fn real_pairs_are_strongly_correlated() {
        let cfg = toy();
        for seed in 0..20 {
            let p = synth_real_pair(&cfg, &mut rng::seeded(seed)).unwrap();
            let r = brightness_vs_rms(&p);
            assert!(r > 0.9, "seed {seed}: r = {r}");
        }
    }

    #[test]
    fn global_desync_decorrelates() {
        let cfg = toy();
        let rs: Vec<f64> = (0..100)
            .map(|seed| {
                let p = synth_fake_pair(&cfg, &DesyncMode::GlobalDesync, &mut rng::seeded(seed)).unwrap();
                brightness_vs_rms(&p)
            })
            .collect();
        let mean = rs.iter().sum::<f64>() / rs.len() as f64;
        assert!(mean.abs() < 0.3, "mean r = {mean}");
    }

    #[test]
    fn local_desync_is_local() {
        let cfg = SynthConfig { noise_std: 0.05, ..toy() };
        let mode = DesyncMode::LocalDesync {
            chunk: ChunkParams { r_min: 0.1, r_max: 0.4, hard_min: 2 },
        };
        for seed in 0..30 {
            let real = synth_real_pair(&cfg, &mut rng::seeded(seed)).unwrap();
            let fake = synth_fake_pair(&cfg, &mode, &mut rng::seeded(seed)).unwrap();
            let Origin::LocalDesync { modality, start, len } = fake.meta.origin else {
                panic!("wrong origin");
            };
            let spf = cfg.samples_per_frame();
            match modality {
                Modality::Visual => {
                    assert_eq!(fake.audio, real.audio);
                    for t in (0..cfg.t_v).filter(|t| *t < start || *t >= start + len) {
                        assert_eq!(fake.visual.step(t), real.visual.step(t));
                    }
                }
                Modality::Audio => {
                    assert_eq!(fake.visual, real.visual);
                    for s in (0..cfg.t_a).filter(|s| *s < start * spf || *s >= (start + len) * spf) {
                        assert_eq!(fake.audio.data()[s].to_bits(), real.audio.data()[s].to_bits());
                    }
                }
            }
            assert!(fake.label_is_sound() && real.label_is_sound());
        }
    }

    #[test]
    fn full_chunk_local_desync_replaces_whole_modality() {
        let cfg = toy();
        let mode = DesyncMode::LocalDesync {
            chunk: ChunkParams { r_min: 1.0, r_max: 1.0, hard_min: 2 },
        };
        let fake = synth_fake_pair(&cfg, &mode, &mut rng::seeded(3)).unwrap();
        assert!(matches!(fake.meta.origin, Origin::LocalDesync { start: 0, len: 16, .. }));
    }

    #[test]
    fn ranges_hold_under_heavy_noise() {
        let cfg = SynthConfig { noise_std: 3.0, ..toy() };
        for seed in 0..5 {
            let p = synth_fake_pair(&cfg, &DesyncMode::GlobalDesync, &mut rng::seeded(seed)).unwrap();
            assert!(p.visual.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(p.audio.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut rng = rng::seeded(0);
        for bad in [
            SynthConfig { t_a: 1601, ..toy() },
            SynthConfig { t_v: 1, t_a: 100, ..toy() },
            SynthConfig { h: 0, ..toy() },
            SynthConfig { noise_std: -1.0, ..toy() },
        ] {
            assert!(matches!(synth_real_pair(&bad, &mut rng), Err(Error::Config(_))));
        }
    }

    #[test]
    fn dataset_mix_and_ids() {
        let cfg = SynthConfig { h: 8, w: 8, ..toy() };
        let ds = synth_dataset(&cfg, 10, 0.5, &DesyncMode::GlobalDesync, 1, "tr").unwrap();
        assert_eq!(ds.iter().filter(|p| p.label == Label::Fake).count(), 5);
        assert_eq!(ds[3].meta.source_id, "tr-00003");
        let again = synth_dataset(&cfg, 10, 0.5, &DesyncMode::GlobalDesync, 1, "tr").unwrap();
        assert_eq!(ds, again);
    }
}
