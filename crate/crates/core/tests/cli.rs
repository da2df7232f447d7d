use std::fs;
use std::path::Path;

use avlab::avdata::{AVPair, Label, TemporalSequence};
use avlab::cli::{apply_override, read_pairs, resolve_config, run};
use avlab::trainloop::RunConfig;
use serde_json::json;

fn avlab(args: &[&str]) -> i32 {
    run(std::iter::once("avlab").chain(args.iter().copied()))
}

/// A tiny config: 4x1x4x4 clips, two-step features, one epoch.
fn write_tiny_config(dir: &Path) -> String {
    let mut cfg = RunConfig::default();
    cfg.synth.t_v = 4;
    cfg.synth.h = 4;
    cfg.synth.w = 4;
    cfg.synth.t_a = 32;
    cfg.detector = avlab::detector::DetectorConfig::tiny(2, 4);
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.data.n_train = 12;
    cfg.data.n_eval = 8;
    cfg.data.fine_grained_chunk.r_min = 0.5;
    cfg.data.fine_grained_chunk.r_max = 0.5;
    let path = dir.join("tiny.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn overrides_parse_json_and_fall_back_to_strings() {
    let mut v = json!({"a": {"b": 1, "c": "x"}});
    apply_override(&mut v, "a.b=2.5").unwrap();
    apply_override(&mut v, "a.c=hello").unwrap();
    assert_eq!(v, json!({"a": {"b": 2.5, "c": "hello"}}));
    assert!(apply_override(&mut v, "a.missing=1").is_err());
    assert!(apply_override(&mut v, "no_equals_sign").is_err());
}

#[test]
fn resolve_applies_file_then_overrides_then_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_tiny_config(tmp.path());
    let cfg = resolve_config(Some(Path::new(&path)), &["epochs=3".into()], Some(9)).unwrap();
    assert_eq!(cfg.epochs, 3);
    assert_eq!(cfg.synth.h, 4);
    assert_eq!((cfg.seed, cfg.synth.seed), (9, 9));
    let err = resolve_config(None, &["detector.t_prime=99".into()], None).unwrap_err();
    assert!(err.is_validation());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(avlab(&["--help"]), 0);
    assert_eq!(avlab(&["frobnicate"]), 1);
    assert_eq!(avlab(&["train", "--bogus"]), 1);
    assert_eq!(avlab(&["synth", "--out", out, "--set", "nope=1"]), 1);
    assert_eq!(avlab(&["synth", "--out", out, "--config", "/does/not/exist.json"]), 2);
    assert_eq!(avlab(&["eval", "--out", out, "--checkpoint", "/does/not/exist.avtc"]), 2);
}

#[test]
fn synth_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(avlab(&["synth", "--config", &cfg, "--seed", "7", "--out", d.to_str().unwrap()]), 0);
    }
    let (da, db) = (dir_bytes(&a), dir_bytes(&b));
    assert!(da.iter().any(|(n, _)| n.starts_with("train/")));
    assert!(da.iter().any(|(n, _)| n.starts_with("fine_grained/")));
    assert_eq!(da, db);
}

#[test]
fn train_eval_ablate_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let run_dir = tmp.path().join("run");
    let rd = run_dir.to_str().unwrap();
    assert_eq!(avlab(&["train", "--config", &cfg, "--out", rd]), 0);
    for f in ["config.json", "metrics.jsonl", "checkpoint.avtc"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }

    // Re-running from the snapshot reproduces the metrics log.
    let again = tmp.path().join("again");
    let snapshot = run_dir.join("config.json");
    assert_eq!(avlab(&["train", "--config", snapshot.to_str().unwrap(), "--out", again.to_str().unwrap()]), 0);
    assert_eq!(fs::read(run_dir.join("metrics.jsonl")).unwrap(), fs::read(again.join("metrics.jsonl")).unwrap());

    let eval_dir = tmp.path().join("eval");
    let ckpt = run_dir.join("checkpoint.avtc");
    assert_eq!(avlab(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(), "--out", eval_dir.to_str().unwrap()]), 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("in_distribution.json")).unwrap()).unwrap();
    assert_eq!(report["n_videos"], 8);
    assert!(eval_dir.join("fine_grained.txt").exists());

    let ab = tmp.path().join("ablate");
    assert_eq!(
        avlab(&["ablate", "--config", &cfg, "--axis", "t-prime", "--values", "1,2", "--seeds", "0,1", "--out", ab.to_str().unwrap()]),
        0
    );
    let table: serde_json::Value = serde_json::from_str(&fs::read_to_string(ab.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 2);
    assert_eq!(avlab(&["ablate", "--config", &cfg, "--axis", "manipulation-kind", "--values", "warp", "--out", ab.to_str().unwrap()]), 1);
}

#[test]
fn augment_with_fixed_spec_and_sampled_specs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(tmp.path());
    let data = tmp.path().join("data");
    assert_eq!(avlab(&["synth", "--config", &cfg, "--split", "train", "--out", data.to_str().unwrap()]), 0);
    let train = data.join("train");
    let pairs = read_pairs(&train).unwrap();
    assert_eq!(pairs.len(), 12);

    let spec = tmp.path().join("spec.json");
    fs::write(&spec, r#"{"kind":"repeat","i":0,"l":4,"param":2,"direction":null,"donor_id":null}"#).unwrap();
    let out = tmp.path().join("fixed");
    let code = avlab(&[
        "augment", "--config", &cfg, "--input", train.to_str().unwrap(), "--spec", spec.to_str().unwrap(),
        "--modality", "visual", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let fixed = read_pairs(&out).unwrap();
    assert!(fixed.iter().all(|p| p.label == Label::Fake && p.meta.visual_manipulations.len() == 1 && p.label_is_sound()));
    let first: &AVPair = &fixed[0];
    assert_eq!(first.visual.step(1), pairs[0].visual.step(0));
    assert!(out.join(format!("{}.json", first.meta.source_id)).exists());

    let sampled = tmp.path().join("sampled");
    let code = avlab(&[
        "augment", "--config", &cfg, "--set", "pseudo_fake_prob=1.0", "--input", train.to_str().unwrap(),
        "--out", sampled.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let sampled = read_pairs(&sampled).unwrap();
    assert!(sampled.iter().all(|p| p.label == Label::Fake && p.label_is_sound()));
}

#[test]
fn gradcheck_passes_on_clean_build() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    assert_eq!(avlab(&["gradcheck", "--instances", "3", "--out", out.to_str().unwrap()]), 0);
    assert!(out.join("gradcheck.json").exists());
}
