use std::collections::BTreeMap;
use std::fs;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avdata::{synth_dataset, AVPair, Label};
use crate::detector::{Detector, ModelInput};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tinynet::{AdamState, Tensor};

use super::{augment_sample, Combo, Outcome, RunConfig};

/// Environment variable bounding the worker threads used for data
/// parallelism. Results do not depend on its value.
pub const WORKERS_ENV: &str = "AVLAB_NUM_WORKERS";

pub fn num_workers() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{WORKERS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub(crate) fn with_workers<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(num_workers()?)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(f)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean BCE over every sample of the epoch.
    pub loss: f64,
    pub n_pseudofake: usize,
    /// Real pairs that entered the loss as real.
    pub n_real: usize,
    /// Fakes taken from the dataset itself.
    pub n_dataset_fake: usize,
    pub n_rejected: usize,
    pub n_audio_only: usize,
    pub n_visual_only: usize,
    pub n_both: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// Parameters as they stood at the end of `best_epoch`.
    pub detector: Detector<f32>,
    pub best_epoch: usize,
    pub best_step: u64,
    pub history: Vec<EpochRecord>,
}

impl TrainOutput {
    pub fn metrics_jsonl(&self) -> String {
        self.history
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn checkpoint_meta(&self, cfg: &RunConfig) -> BTreeMap<String, String> {
        let loss = self.history[self.best_epoch - 1].loss;
        BTreeMap::from([
            ("epoch".to_string(), self.best_epoch.to_string()),
            ("step".to_string(), self.best_step.to_string()),
            ("seed".to_string(), cfg.seed.to_string()),
            ("train_loss".to_string(), format!("{loss:e}")),
        ])
    }
}

/// Base training mix drawn from `cfg.synth` and `cfg.data`.
pub fn synth_train_set(cfg: &RunConfig) -> Result<Vec<AVPair>> {
    let d = &cfg.data;
    synth_dataset(&cfg.synth, d.n_train, d.train_fake_fraction, &d.train_fake_mode, tag::SYNTH_TRAIN, "train")
}

struct EpochData {
    inputs: Vec<ModelInput<f32>>,
    targets: Vec<f32>,
    record: EpochRecord,
}

fn prepare_epoch(cfg: &RunConfig, train_set: &[AVPair], donors: &[AVPair], epoch: usize) -> Result<EpochData> {
    let drawn: Vec<(AVPair, Option<Outcome>)> = train_set
        .par_iter()
        .enumerate()
        .map(|(k, pair)| {
            if pair.label == Label::Fake {
                return Ok((pair.clone(), None));
            }
            let mut r = rng::stream(cfg.seed, &[tag::AUGMENT, epoch as u64, k as u64]);
            let a = augment_sample(pair, donors, cfg, &mut r)?;
            Ok((a.pair, Some(a.outcome)))
        })
        .collect::<Result<_>>()?;

    let mut record = EpochRecord {
        epoch,
        loss: 0.0,
        n_pseudofake: 0,
        n_real: 0,
        n_dataset_fake: 0,
        n_rejected: 0,
        n_audio_only: 0,
        n_visual_only: 0,
        n_both: 0,
        step: 0,
    };
    for (pair, outcome) in &drawn {
        if !pair.label_is_sound() {
            return Err(Error::Usage(format!("pair {:?} has an unsupported label", pair.meta.source_id)));
        }
        match outcome {
            None => record.n_dataset_fake += 1,
            Some(Outcome::Unchanged) => record.n_real += 1,
            Some(Outcome::Rejected) => {
                record.n_real += 1;
                record.n_rejected += 1;
            }
            Some(Outcome::PseudoFake(c)) => {
                record.n_pseudofake += 1;
                match c {
                    Combo::AudioOnly => record.n_audio_only += 1,
                    Combo::VisualOnly => record.n_visual_only += 1,
                    Combo::Both => record.n_both += 1,
                }
            }
        }
    }
    if record.n_real == 0 || record.n_real == drawn.len() {
        return Err(Error::Usage(format!("epoch {epoch}: training stream needs both labels")));
    }
    let inputs = drawn.par_iter().map(|(p, _)| ModelInput::from_pair(p)).collect::<Result<_>>()?;
    let targets = drawn.iter().map(|(p, _)| p.label.target() as f32).collect();
    Ok(EpochData { inputs, targets, record })
}

/// Train a fresh detector on `train_set` (plus per-epoch pseudo-fakes of its
/// real pairs) and return the epoch with the lowest mean loss, earliest on
/// ties. With `cfg.checkpoint_dir` set, the metrics log and the selected
/// checkpoint are written there.
pub fn train(cfg: &RunConfig, train_set: &[AVPair]) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let out = with_workers(|| train_inner(cfg, train_set))?;
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics = dir.join("metrics.jsonl");
        fs::write(&metrics, out.metrics_jsonl()).map_err(|e| Error::io(&metrics, e))?;
        out.detector.save(&dir.join("checkpoint.avtc"), out.checkpoint_meta(cfg))?;
    }
    Ok(out)
}

pub(crate) fn train_inner(cfg: &RunConfig, train_set: &[AVPair]) -> Result<TrainOutput> {
    let mut det = Detector::<f32>::new(cfg.detector.clone(), cfg.input_shape(), cfg.seed)?;
    let donors: Vec<AVPair> = train_set.iter().filter(|p| p.label == Label::Real).cloned().collect();
    let mut adam = AdamState::new(cfg.adam(), det.params().values());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, u64, Vec<Tensor<f32>>)> = None;

    for epoch in 1..=cfg.epochs {
        let EpochData { inputs, targets, mut record } = prepare_epoch(cfg, train_set, &donors, epoch)?;
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut losses = vec![0f32; inputs.len()];

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let per_sample: Vec<(f32, Vec<Tensor<f32>>)> = batch
                .par_iter()
                .map(|&k| {
                    let mut g = det.params().zero_grads();
                    let (loss, _) = det.loss_and_grad(&inputs[k], targets[k], &mut g)?;
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            let mut grads = det.params().zero_grads();
            for (&k, (loss, g)) in batch.iter().zip(&per_sample) {
                if !loss.is_finite() || !g.iter().all(Tensor::all_finite) {
                    return Err(Error::Divergence {
                        epoch,
                        batch: b,
                        batch_seed: rng::derive_seed(cfg.seed, &[tag::BATCH, epoch as u64, b as u64]),
                        loss: *loss as f64,
                    });
                }
                losses[k] = *loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(gi)?;
                }
            }
            let scale = 1.0 / batch.len() as f32;
            grads.iter_mut().for_each(|g| g.scale(scale));
            adam.step(det.params_mut().values_mut(), &grads)?;
        }

        record.loss = losses.iter().map(|&l| l as f64).sum::<f64>() / losses.len() as f64;
        record.step = adam.step;
        log::info!("epoch {epoch}: loss {:.5} ({} pseudo-fakes)", record.loss, record.n_pseudofake);
        if best.as_ref().is_none_or(|(l, ..)| record.loss < *l) {
            best = Some((record.loss, epoch, adam.step, det.params().values().to_vec()));
        }
        history.push(record);
    }

    let (_, best_epoch, best_step, values) = best.expect("at least one epoch");
    det.params_mut().values_mut().clone_from_slice(&values);
    Ok(TrainOutput { detector: det, best_epoch, best_step, history })
}
