use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pseudofake::{KindPolicy, ManipulationKind};
use crate::trainloop::{synth_train_set, train, RunConfig};

use super::{evaluate, synth_eval_splits, SubsequencePolicy};

/// AUC per eval split for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub splits: Vec<String>,
    pub auc: Vec<f64>,
    pub best_epoch: usize,
}

/// Memo of finished runs keyed by the hash of their resolved config, so
/// overlapping sweeps train each configuration once.
#[derive(Debug, Default)]
pub struct RunCache {
    runs: Mutex<HashMap<String, RunResult>>,
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn run_key(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.checkpoint_dir = None;
    let json = serde_json::to_string(&c).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

/// Synthesise the train set from `cfg`, train, and evaluate on both
/// synthetic eval splits.
pub fn train_and_evaluate(cfg: &RunConfig) -> Result<RunResult> {
    let train_set = synth_train_set(cfg)?;
    let out = train(cfg, &train_set)?;
    let mut result = RunResult { splits: Vec::new(), auc: Vec::new(), best_epoch: out.best_epoch };
    for split in synth_eval_splits(cfg)? {
        let report = evaluate(&out.detector, &split.pairs, &SubsequencePolicy::default())?;
        result.splits.push(split.name);
        result.auc.push(report.auc);
    }
    Ok(result)
}

fn cached_run(cfg: &RunConfig, cache: &RunCache) -> Result<RunResult> {
    let key = run_key(cfg);
    if let Some(r) = cache.runs.lock().expect("cache lock").get(&key) {
        return Ok(r.clone());
    }
    let r = train_and_evaluate(cfg)?;
    cache.runs.lock().expect("cache lock").insert(key, r.clone());
    Ok(r)
}

/// The quantity swept by [`ablation_run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum AblationAxis {
    /// `None` trains without pseudo-fakes.
    ManipulationKind(Vec<Option<ManipulationKind>>),
    TPrime(Vec<usize>),
    /// Attention on and off.
    Attention,
}

impl AblationAxis {
    fn name(&self) -> &'static str {
        match self {
            AblationAxis::ManipulationKind(_) => "manipulation_kind",
            AblationAxis::TPrime(_) => "t_prime",
            AblationAxis::Attention => "attention",
        }
    }

    pub(crate) fn variants(&self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        match self {
            AblationAxis::ManipulationKind(kinds) => kinds
                .iter()
                .map(|k| {
                    let mut c = base.clone();
                    match k {
                        None => {
                            c.pseudo_fake_prob = 0.0;
                            ("none".to_string(), c)
                        }
                        Some(kind) => {
                            c.kind_policy = KindPolicy::only(*kind);
                            (kind.name().to_string(), c)
                        }
                    }
                })
                .collect(),
            AblationAxis::TPrime(values) => values
                .iter()
                .map(|&t| {
                    let mut c = base.clone();
                    c.detector.t_prime = t;
                    (t.to_string(), c)
                })
                .collect(),
            AblationAxis::Attention => [true, false]
                .iter()
                .map(|&on| {
                    let mut c = base.clone();
                    c.detector.attention = on;
                    ((if on { "on" } else { "off" }).to_string(), c)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    /// `auc[split][seed]`.
    pub auc: Vec<Vec<f64>>,
    pub mean_auc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: String,
    pub seeds: Vec<u64>,
    pub splits: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, value: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.value == value)
    }

    pub fn split_index(&self, split: &str) -> Option<usize> {
        self.splits.iter().position(|s| s == split)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    /// Mean AUC per split, one row per axis value.
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.value.len()).max().unwrap_or(0).max(self.axis.len());
        let mut s = format!("{:<w$}", self.axis);
        for split in &self.splits {
            write!(s, "  {split:>15}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{:<w$}", r.value).unwrap();
            for m in &r.mean_auc {
                write!(s, "  {m:>15.4}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// One trained model per (axis value, seed); each seed sets both the run
/// seed and the synthetic data seed. Runs already in `cache` are reused.
pub fn ablation_run(base: &RunConfig, axis: &AblationAxis, seeds: &[u64], cache: &RunCache) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let variants = axis.variants(base);
    if variants.is_empty() {
        return Err(Error::Config(format!("ablation axis {} has no values", axis.name())));
    }
    let mut splits = Vec::new();
    let mut rows = Vec::new();
    for (value, cfg) in variants {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.synth.seed = seed;
            let r = cached_run(&c, cache)?;
            log::info!("{}={value} seed {seed}: auc {:?}", axis.name(), r.auc);
            splits = r.splits.clone();
            per_seed.push(r.auc);
        }
        let auc: Vec<Vec<f64>> = (0..splits.len()).map(|s| per_seed.iter().map(|a| a[s]).collect()).collect();
        let mean_auc = auc.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
        rows.push(AblationRow { value, auc, mean_auc });
    }
    Ok(AblationTable { axis: axis.name().to_string(), seeds: seeds.to_vec(), splits, rows })
}
