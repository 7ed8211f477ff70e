use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tmr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmr")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = tmr(args);
    assert!(
        out.status.success(),
        "tmr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path) {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"clusters": 3, "tracks_per_cluster": 24, "feature_dim": 16}"#).unwrap();
    let v = ok_json(&["gen-synth", "--spec", s(&spec), "--out", s(&dir.join("data")), "--seed", "5"]);
    assert_eq!(v["tracks"], 72);
    assert_eq!(v["seed"], 5);
    let conf = dir.join("data/train.conf");
    let mut text = std::fs::read_to_string(&conf).unwrap();
    text.push_str("steps = 40\nbatch_size = 16\ncheckpoint_every = 15\n");
    std::fs::write(&conf, text).unwrap();
}

#[test]
fn contrastive_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir);
    let data = dir.join("data");
    let dataset = data.join("dataset.jsonl");
    let ckpt = dir.join("model.ckpt");

    let v = ok_json(&[
        "train", "--config", s(&data.join("train.conf")), "--objective", "contrastive",
        "--text-rep", "stochastic", "--text-encoder", "bow", "--out", s(&ckpt),
    ]);
    assert_eq!(v["steps"], 40);
    assert!(v["temperature"].as_f64().unwrap() >= 1e-3);
    for step in [15, 30] {
        assert!(dir.join(format!("model.ckpt.step{step}")).exists());
    }
    assert!(!dir.join("model.ckpt.step40").exists());
    let csv = std::fs::read_to_string(dir.join("model.ckpt.loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,loss,tau"));
    assert_eq!(csv.lines().count(), 41);

    let audio = dir.join("audio.xmeb");
    let text = dir.join("text.xmeb");
    let a = ok_json(&["embed", "--ckpt", s(&ckpt), "--dataset", s(&dataset), "--modality", "audio", "--out", s(&audio)]);
    assert_eq!(a["items"], 72);
    ok_json(&["embed", "--ckpt", s(&ckpt), "--dataset", s(&dataset), "--modality", "text", "--out", s(&text)]);

    let tags = ok_json(&["eval-tags", "--audio-store", s(&audio), "--dataset", s(&dataset), "--ckpt", s(&ckpt)]);
    let roc = tags["roc_auc_macro"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&roc));
    assert_eq!(tags["metadata"]["store_checksums"]["audio"], a["checksum"]);

    let pairs = data.join("pairs.jsonl");
    let full = ok_json(&["eval-sentence", "--text-store", s(&text), "--audio-store", s(&audio), "--pairs", s(&pairs)]);
    let held = ok_json(&[
        "eval-sentence", "--text-store", s(&text), "--audio-store", s(&audio), "--pairs", s(&pairs),
        "--dataset", s(&dataset),
    ]);
    // a smaller corpus can only move the ground truth up
    assert!(held["r_at_1"].as_f64().unwrap() >= full["r_at_1"].as_f64().unwrap());
    assert!(held["medr"].as_u64().unwrap() >= 1);

    let report = dir.join("probe.json");
    let out = tmr(&["probe", "--store", s(&audio), "--dataset", s(&dataset), "--classifier", "linear", "--out", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let probe: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(probe["classifier"], "linear");

    let hits = ok_json(&["query", "--ckpt", s(&ckpt), "--audio-store", s(&audio), "--text", "c0w1 c0w2", "--topk", "5"]);
    let items = hits["items"].as_array().unwrap();
    assert_eq!(items.len(), 5);
    let scores: Vec<f64> = items.iter().map(|i| i[1].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    // same seed, same bytes
    let again = dir.join("again.ckpt");
    ok_json(&["train", "--config", s(&data.join("train.conf")), "--out", s(&again)]);
    assert_eq!(std::fs::read(&ckpt).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn classification_word_overlap() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    gen(dir);
    let data = dir.join("data");
    let dataset = data.join("dataset.jsonl");
    let ckpt = dir.join("cls.ckpt");
    let v = ok_json(&["train", "--config", s(&data.join("train.conf")), "--objective", "classification", "--out", s(&ckpt)]);
    assert!(v["temperature"].is_null());
    let audio = dir.join("audio.xmeb");
    ok_json(&["embed", "--ckpt", s(&ckpt), "--dataset", s(&dataset), "--modality", "audio", "--out", s(&audio)]);
    let tags = ok_json(&["eval-tags", "--audio-store", s(&audio), "--dataset", s(&dataset), "--ckpt", s(&ckpt)]);
    assert!(tags["roc_auc_macro"].as_f64().is_some());
    let r = ok_json(&[
        "eval-sentence", "--audio-store", s(&audio), "--pairs", s(&data.join("pairs.jsonl")), "--word-overlap",
        "--ckpt", s(&ckpt), "--dataset", s(&dataset),
    ]);
    assert!(r["map10"].as_f64().is_some());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"clusterz": 3}"#).unwrap();
    let out = tmr(&["gen-synth", "--spec", s(&spec), "--out", s(&dir.join("d")), "--seed", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let conf = dir.join("bad.conf");
    std::fs::write(&conf, "sample_rate = 44100\n").unwrap();
    assert!(!tmr(&["train", "--config", s(&conf), "--out", s(&dir.join("m"))]).status.success());

    assert!(!tmr(&["train", "--config", s(&conf), "--objective", "hinge", "--out", "x"]).status.success());
    let missing = dir.join("nope.xmeb");
    assert!(!tmr(&["eval-tags", "--audio-store", s(&missing), "--dataset", "x.jsonl"]).status.success());
}
