//! The `avlab` command line.
//!
//! Every subcommand resolves a [`RunConfig`] (defaults, then `--config`,
//! then `--set` overrides, then `--seed`) and writes it to
//! `<out>/config.json` before running.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::avdata::{AVPair, Label};
use crate::detector::gradcheck::model_suite;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::evalkit::{
    ablation_run, evaluate, synth_eval_splits, AblationAxis, EvalSplit, RunCache, SubsequencePolicy,
};
use crate::pseudofake::{apply_manipulation, ManipulationKind, ManipulationSpec};
use crate::rng::{self, tag};
use crate::tinynet::gradcheck::op_suite;
use crate::trainloop::{augment_sample, synth_train_set, train, RunConfig};

const CONTAINER_EXT: &str = "avtc";

#[derive(Debug, Parser)]
#[command(name = "avlab", version, about = "Temporal audio-visual deepfake detection lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; unspecified fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets both the run seed and the synthetic data seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "avlab-out")]
    out: PathBuf,
    /// Dotted-path override such as `detector.t_prime=4` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    InDistribution,
    FineGrained,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModalityArg {
    Visual,
    Audio,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    ManipulationKind,
    TPrime,
    Attention,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic datasets as containers.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Apply one spec, or sampled pseudo-fake specs, to stored pairs.
    Augment {
        #[command(flatten)]
        common: Common,
        /// Directory of pair containers.
        #[arg(long)]
        input: PathBuf,
        /// ManipulationSpec JSON; replace donors are looked up by id in `--input`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "visual")]
        modality: ModalityArg,
    },
    /// Train a detector; writes metrics.jsonl and checkpoint.avtc.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory of training pairs; synthesised from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Video-level AUC of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of eval pairs; both synthetic splits when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate one model per axis value and seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated axis values (`none,replace,...` or T' values).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Finite-difference check of every op and the tiny detector.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth { common, .. }
            | Command::Augment { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Ablate { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }
}

/// Parse `argv` (program name first), run, and return the exit code:
/// 0 on success, 1 for usage or validation errors, 2 for runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Set `path` (dot separated) inside `root` to `raw`, parsed as JSON when
/// possible and as a string otherwise. Every path segment must exist.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override {assignment:?} is not KEY=VALUE")))?;
    let mut node = root;
    for key in path.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(key))
            .ok_or_else(|| Error::Config(format!("override key {path:?}: no field {key:?}")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Defaults, then the config file, then overrides, then the seed.
pub fn resolve_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let base = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<RunConfig>(&text)?
        }
        None => RunConfig::default(),
    };
    let mut value = serde_json::to_value(&base)?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg: RunConfig = serde_json::from_value(value)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_pairs(dir: &Path, pairs: &[AVPair]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in pairs {
        p.save(&dir.join(format!("{}.{CONTAINER_EXT}", p.meta.source_id)))?;
    }
    Ok(())
}

/// All pair containers in `dir`, in file-name order.
pub fn read_pairs(dir: &Path) -> Result<Vec<AVPair>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == CONTAINER_EXT))
        .collect();
    paths.sort();
    paths.iter().map(|p| AVPair::load(p)).collect()
}

fn dispatch(cmd: &Command) -> Result<()> {
    let common = cmd.common();
    let mut cfg = resolve_config(common.config.as_deref(), &common.overrides, common.seed)?;
    let out = &common.out;
    if matches!(cmd, Command::Train { .. }) {
        cfg.checkpoint_dir = Some(out.clone());
    }
    write(&out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;

    match cmd {
        Command::Synth { split, .. } => {
            let want = |s: SplitArg| matches!(split, SplitArg::All) || std::mem::discriminant(split) == std::mem::discriminant(&s);
            if want(SplitArg::Train) {
                write_pairs(&out.join("train"), &synth_train_set(&cfg)?)?;
            }
            for EvalSplit { name, pairs } in synth_eval_splits(&cfg)? {
                let s = if name == crate::evalkit::IN_DISTRIBUTION { SplitArg::InDistribution } else { SplitArg::FineGrained };
                if want(s) {
                    write_pairs(&out.join(&name), &pairs)?;
                }
            }
            Ok(())
        }
        Command::Augment { input, spec, modality, .. } => augment_dir(&cfg, input, spec.as_deref(), *modality, out),
        Command::Train { data, .. } => {
            let set = match data {
                Some(d) => read_pairs(d)?,
                None => synth_train_set(&cfg)?,
            };
            let result = train(&cfg, &set)?;
            println!("selected epoch {} (loss {:.6})", result.best_epoch, result.history[result.best_epoch - 1].loss);
            Ok(())
        }
        Command::Eval { checkpoint, data, .. } => {
            let (det, _) = Detector::<f32>::load(checkpoint)?;
            let splits = match data {
                Some(d) => vec![EvalSplit { name: "data".into(), pairs: read_pairs(d)? }],
                None => synth_eval_splits(&cfg)?,
            };
            for split in splits {
                let report = evaluate(&det, &split.pairs, &SubsequencePolicy::default())?;
                println!("{}: auc {:.4}", split.name, report.auc);
                write(&out.join(format!("{}.json", split.name)), report.to_json())?;
                write(&out.join(format!("{}.txt", split.name)), report.to_text())?;
            }
            Ok(())
        }
        Command::Ablate { axis, values, seeds, .. } => {
            let axis = parse_axis(*axis, values)?;
            let table = ablation_run(&cfg, &axis, seeds, &RunCache::new())?;
            print!("{}", table.to_text());
            write(&out.join("ablation.json"), table.to_json())?;
            write(&out.join("ablation.txt"), table.to_text())
        }
        Command::Gradcheck { instances, .. } => {
            let seed = cfg.seed;
            let mut reports = op_suite(seed, *instances);
            let ops = reports.len();
            reports.extend(model_suite(seed, *instances));
            let mut ok = true;
            for (k, r) in reports.iter().enumerate() {
                let tol = if k < ops || r.name != "detector" { 1e-4 } else { 1e-3 };
                let pass = r.passes(tol);
                ok &= pass;
                println!(
                    "{:<22} max rel err {:.3e}  (tol {tol:.0e}, {} coords, {} skipped)  {}",
                    r.name,
                    r.max_rel_err,
                    r.coordinates,
                    r.skipped,
                    if pass { "ok" } else { "FAIL" }
                );
            }
            write(&out.join("gradcheck.json"), serde_json::to_string_pretty(&reports)?)?;
            if ok {
                Ok(())
            } else {
                Err(Error::UndefinedMetric("gradient check failed".into()))
            }
        }
    }
}

fn parse_axis(axis: AxisArg, values: &[String]) -> Result<AblationAxis> {
    match axis {
        AxisArg::Attention => Ok(AblationAxis::Attention),
        AxisArg::TPrime => {
            let ts = values
                .iter()
                .map(|v| v.parse::<usize>().map_err(|_| Error::Usage(format!("t_prime value {v:?} is not an integer"))))
                .collect::<Result<Vec<_>>>()?;
            if ts.is_empty() {
                return Err(Error::Usage("--values is required for t_prime".into()));
            }
            Ok(AblationAxis::TPrime(ts))
        }
        AxisArg::ManipulationKind => {
            let names: Vec<String> = if values.is_empty() {
                std::iter::once("none".to_string()).chain(ManipulationKind::ALL.iter().map(|k| k.name().to_string())).collect()
            } else {
                values.to_vec()
            };
            let kinds = names
                .iter()
                .map(|v| match v.as_str() {
                    "none" => Ok(None),
                    _ => ManipulationKind::ALL
                        .iter()
                        .find(|k| k.name() == v)
                        .map(|k| Some(*k))
                        .ok_or_else(|| Error::Usage(format!("unknown manipulation kind {v:?}"))),
                })
                .collect::<Result<_>>()?;
            Ok(AblationAxis::ManipulationKind(kinds))
        }
    }
}

fn augment_dir(cfg: &RunConfig, input: &Path, spec: Option<&Path>, modality: ModalityArg, out: &Path) -> Result<()> {
    let pairs = read_pairs(input)?;
    let donors: Vec<AVPair> = pairs.iter().filter(|p| p.label == Label::Real).cloned().collect();
    let fixed: Option<ManipulationSpec> = match spec {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?),
        None => None,
    };
    let mut results = Vec::new();
    for (k, pair) in pairs.iter().enumerate() {
        let augmented = match &fixed {
            Some(s) => apply_fixed(pair, s, &pairs, modality)?,
            None if pair.label == Label::Real => {
                let mut r = rng::stream(cfg.seed, &[tag::AUGMENT, 0, k as u64]);
                augment_sample(pair, &donors, cfg, &mut r)?.pair
            }
            None => pair.clone(),
        };
        results.push(augmented);
    }
    write_pairs(out, &results)?;
    for p in &results {
        write(&out.join(format!("{}.json", p.meta.source_id)), serde_json::to_string_pretty(&p.meta)? + "\n")?;
    }
    Ok(())
}

fn apply_fixed(pair: &AVPair, spec: &ManipulationSpec, pool: &[AVPair], modality: ModalityArg) -> Result<AVPair> {
    let donor = match &spec.donor_id {
        Some(id) => Some(
            pool.iter()
                .find(|p| &p.meta.source_id == id)
                .ok_or_else(|| Error::Donor(format!("donor {id:?} not found in input")))?,
        ),
        None => None,
    };
    let mut out = pair.clone();
    match modality {
        ModalityArg::Visual => {
            out.visual = apply_manipulation(&pair.visual, spec, donor.map(|d| &d.visual))?;
            out.meta.visual_manipulations.push(spec.clone());
        }
        ModalityArg::Audio => {
            out.audio = apply_manipulation(&pair.audio, spec, donor.map(|d| &d.audio))?;
            out.meta.audio_manipulations.push(spec.clone());
        }
    }
    out.label = Label::Fake;
    Ok(out)
}
