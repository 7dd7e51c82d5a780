use std::fs;
use std::path::Path;
use std::process::Command;

use ctran::cli::PredictRecord;
use ctran::config::{GroupValues, ModelConfig, RunConfig, TrainConfig};
use ctran::data::{synthetic, write_jsonl, Splits};
use ctran::training::{train_run, Checkpoint};

fn ctran(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_ctran"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn tiny_config(dir: &Path) -> String {
    let cfg = RunConfig {
        model: ModelConfig::tiny(),
        train: TrainConfig { learning_rate: GroupValues::splat(3e-3), batch_size: 8, ..TrainConfig::default() },
    };
    let p = dir.join("tiny.json");
    fs::write(&p, serde_json::to_string(&cfg).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn one_epoch_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("run");
    assert_eq!(ctran(&["synth", "--out", s(&data)]).0, 0);
    let cfg = tiny_config(dir.path());
    let (code, log) = ctran(&["train", "--config", &cfg, "--data", s(&data), "--out", s(&out), "--epochs", "1", "--seeds", "1", "--deterministic"]);
    assert_eq!(code, 0, "{log}");
    let ck = Checkpoint::load(out.join("seed-1/checkpoint")).unwrap();
    assert_eq!(ck.train.epochs, 1);
    let metrics: serde_json::Value = serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    for key in ["slot_f1", "slot_precision", "slot_recall", "intent_accuracy", "per_seed", "median"] {
        assert!(metrics.get(key).is_some(), "{key}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([1]));
    assert!(manifest["wall_clock"]["per_run"][0]["epoch_seconds"].as_array().unwrap().len() == 1);
    let snapshot = RunConfig::load(out.join("config.json")).unwrap();
    assert_eq!(snapshot.train.epochs, 1);
}

#[test]
fn rerun_reproduces_losses_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ctran(&["synth", "--out", s(&data)]);
    let cfg = tiny_config(dir.path());
    let mut losses = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let (code, log) = ctran(&["train", "--config", &cfg, "--data", s(&data), "--out", s(&out), "--epochs", "2", "--seeds", "4", "--deterministic"]);
        assert_eq!(code, 0, "{log}");
        losses.push(fs::read(out.join("seed-4/losses.json")).unwrap());
    }
    assert_eq!(losses[0], losses[1]);
}

#[test]
fn decoder_ablation_emits_a_comparison_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ctran(&["synth", "--out", s(&data)]);
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("abl");
    let (code, log) = ctran(&["train", "--config", &cfg, "--data", s(&data), "--out", s(&out), "--epochs", "1", "--seeds", "1", "--ablation", "decoder"]);
    assert_eq!(code, 0, "{log}");
    assert!(log.contains("| Dataset | Regular decoder SF F1 | Aligned decoder SF F1 | Delta |"), "{log}");
    let row: ctran::cli::AblationRow = serde_json::from_slice(&fs::read(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(row.dataset, "data");
    assert!(out.join("regular/seed-1/checkpoint/params.bin").exists());
    assert!(out.join("aligned/seed-1/checkpoint/params.bin").exists());
    let regular = Checkpoint::load(out.join("regular/seed-1/checkpoint")).unwrap();
    assert_eq!(regular.model.config.slot.alignment.to_string(), "regular");
}

#[test]
fn predict_returns_memorized_labels_and_handles_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let train = synthetic::corpus(8, 2);
    let splits = Splits { dev: train.clone(), test: train.clone(), train: train.clone() };
    let cfg = TrainConfig {
        learning_rate: GroupValues::splat(3e-3),
        dropout: GroupValues::splat(0.0),
        decay: GroupValues::splat(1.0),
        epochs: 80,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let outcome = train_run(&splits, &ModelConfig::tiny(), &cfg, 1, |_| {}).unwrap();
    assert_eq!(outcome.best_dev.slot_f1, 1.0);
    let ck = dir.path().join("ck");
    outcome.best.save(&ck).unwrap();

    let input = dir.path().join("in.jsonl");
    write_jsonl(&train, &input).unwrap();
    let out = dir.path().join("out.jsonl");
    let (code, log) = ctran(&["predict", "--checkpoint", s(&ck), "--input", s(&input), "--out", s(&out)]);
    assert_eq!(code, 0, "{log}");
    let records: Vec<PredictRecord> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), train.len());
    for (r, ex) in records.iter().zip(&train) {
        assert_eq!(r.tokens, ex.tokens);
        assert_eq!(r.slots, ex.slots);
        assert_eq!(r.intent, ex.intent);
        assert!(r.latency_ms >= 0.0);
    }

    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out2 = dir.path().join("out2.jsonl");
    assert_eq!(ctran(&["predict", "--checkpoint", s(&ck), "--input", s(&empty), "--out", s(&out2)]).0, 0);
    assert_eq!(fs::read(&out2).unwrap().len(), 0);

    let (code, _) = ctran(&["eval", "--checkpoint", s(&ck), "--input", s(&input)]);
    assert_eq!(code, 0);
}

#[test]
fn convert_reads_tabbed_splits() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("tsv");
    fs::create_dir(&tsv).unwrap();
    let block = "show\tO\nboston\tB-loc\nintent\tflight\n\nfares\tO\nintent\tairfare\n";
    for split in ["train", "dev", "test"] {
        fs::write(tsv.join(format!("{split}.tsv")), block).unwrap();
    }
    let out = dir.path().join("jsonl");
    assert_eq!(ctran(&["convert", "--data", s(&tsv), "--out", s(&out)]).0, 0);
    let back = Splits::load(&out, ctran::data::CorpusFormat::Jsonl).unwrap();
    assert_eq!(back.train.len(), 2);
    assert_eq!(back.train[0].slots, vec!["O", "B-loc"]);
    assert_eq!(back.test[1].intent, "airfare");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ctran(&["verify", "--scope", "masks"]).0, 0);
    assert_eq!(ctran(&["verify", "--scope", "metrics"]).0, 0);
    assert_eq!(ctran(&["masks", "--n", "4"]).0, 0);
    let missing = dir.path().join("missing");
    assert_eq!(ctran(&["train", "--data", s(&missing), "--out", s(&dir.path().join("o"))]).0, 3);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"train": {"learning_rat": 1}}"#).unwrap();
    let (code, log) = ctran(&["train", "--config", s(&bad), "--data", s(&missing), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code, 2);
    assert!(log.contains("learning_rat"), "{log}");
    assert_eq!(ctran(&["train", "--bogus"]).0, 2);
    assert_eq!(ctran(&["predict", "--checkpoint", s(&missing), "--input", s(&bad), "--out", s(&dir.path().join("p"))]).0, 3);
}
