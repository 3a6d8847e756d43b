use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brm_core::corpus::{parse_conllu_str, read_conllu_file};
use tempfile::TempDir;

fn brm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = brm(args);
    assert!(
        out.status.success(),
        "brm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generate(dir: &Path, kind: &str, count: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("{kind}-{seed}.conllu"));
    ok(&["generate", "--kind", kind, "--count", &count.to_string(), "--seed", &seed.to_string(), "--output", p(&path)]);
    path
}

const SMALL: [&str; 8] = ["--hidden", "64", "--word-dim", "16", "--embed-dim", "8", "--optimizer", "adam"];

fn train(dir: &Path, out: &str, corpus: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join(out);
    let mut args = vec!["train", "--train", p(corpus), "--dev", p(corpus), "--out", p(&out)];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args);
    out
}

#[test]
fn overfit_pipeline_reaches_full_uas() {
    let dir = TempDir::new().unwrap();
    let corpus = generate(dir.path(), "toy", 20, 3);
    let run = train(dir.path(), "parser", &corpus, &["--machine", "parser", "--regime", "sup", "--epochs", "25", "--lr", "0.002"]);
    for file in ["model.brm", "last.brm", "metrics.jsonl", "manifest.json"] {
        assert!(run.join(file).is_file(), "{file} missing");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 25);

    let pred = dir.path().join("pred.conllu");
    ok(&["decode", "--model", p(&run.join("model.brm")), "--input", p(&corpus), "--output", p(&pred)]);
    assert!(dir.path().join("pred.conllu.manifest.json").is_file());
    let report = ok(&["eval", "--pred", p(&pred), "--gold", p(&corpus), "--json"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["metrics"][0]["metrics"]["uas"], 1.0);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = TempDir::new().unwrap();
    let corpus = generate(dir.path(), "toy", 5, 1);
    let out = dir.path().join("out");

    let missing = brm(&["train", "--train", "/nonexistent/corpus.conllu", "--out", p(&out)]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));

    let zero = brm(&["train", "--train", p(&corpus), "--out", p(&out), "--epochs", "0"]);
    assert_eq!(zero.status.code(), Some(2));

    let conflict = brm(&["train", "--train", p(&corpus), "--out", p(&out), "--regime", "sup", "--k", "1"]);
    assert_eq!(conflict.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&conflict.stderr).contains("rl-backtrack"));

    assert_eq!(brm(&["train", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(brm(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(brm(&["eval", "--pred", p(&corpus), "--gold", "/nonexistent"]).status.code(), Some(2));
}

#[test]
fn eval_of_identical_files() {
    let dir = TempDir::new().unwrap();
    let corpus = generate(dir.path(), "random-trees", 30, 2);
    let report = ok(&["eval", "--pred", p(&corpus), "--gold", p(&corpus), "--compare", p(&corpus), "--json"]);
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["metrics"][0]["metrics"]["upos_accuracy"], 1.0);
    assert_eq!(report["metrics"][0]["metrics"]["uas"], 1.0);
    assert!(report["p_values"]["uas"].as_f64().unwrap() > 0.05);

    let other = generate(dir.path(), "random-trees", 29, 7);
    let out = brm(&["eval", "--pred", p(&other), "--gold", p(&corpus)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn backtracking_decode_trace_and_stats() {
    let dir = TempDir::new().unwrap();
    let corpus = generate(dir.path(), "right-context", 30, 4);
    let run = train(
        dir.path(),
        "bt",
        &corpus,
        &["--machine", "tagger", "--regime", "rl-backtrack", "--k", "1", "--epochs", "3"],
    );
    let model = run.join("model.brm");

    let pred = dir.path().join("k0.conllu");
    let actions = dir.path().join("k0.json");
    let trace = dir.path().join("k0.txt");
    ok(&[
        "decode", "--model", p(&model), "--input", p(&corpus), "--output", p(&pred), "--k", "0",
        "--actions", p(&actions), "--trace", p(&trace),
    ]);
    let text = std::fs::read_to_string(&actions).unwrap();
    let file: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(file["k"], 0);
    assert!(!text.contains("\"BACK\""));
    assert!(std::fs::read_to_string(&trace).unwrap().contains("# sentence 30"));
    let reparsed = parse_conllu_str(&std::fs::read_to_string(&pred).unwrap()).unwrap();
    assert_eq!(reparsed.len(), 30);

    let stats = ok(&["stats", "--actions", p(&actions), "--gold", p(&corpus), "--json"]);
    let stats: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert_eq!(stats["n_backs"], 0);
    assert_eq!(stats["undefined"], true);
    assert_eq!(stats["b_prec"], 0.0);

    let one = ok(&["trace", "--actions", p(&actions), "--input", p(&corpus), "--sentence", "2"]);
    assert!(one.starts_with("# sentence 2\n"));
    let bad = brm(&["trace", "--actions", p(&actions), "--input", p(&corpus), "--sentence", "31"]);
    assert_eq!(bad.status.code(), Some(2));

    let mismatch = brm(&["decode", "--model", p(&model), "--input", p(&corpus), "--machine", "parser"]);
    assert_eq!(mismatch.status.code(), Some(1));
}

#[test]
fn rerun_from_manifest_is_bit_identical() {
    let dir = TempDir::new().unwrap();
    let corpus = generate(dir.path(), "random-trees", 15, 5);
    let first = train(
        dir.path(),
        "first",
        &corpus,
        &["--machine", "tagparser", "--regime", "rl-backtrack", "--k", "1", "--epochs", "2", "--seed", "9"],
    );
    let second = dir.path().join("second");
    ok(&["train", "--from-manifest", p(&first.join("manifest.json")), "--out", p(&second)]);
    for file in ["model.brm", "last.brm", "metrics.jsonl"] {
        assert_eq!(std::fs::read(first.join(file)).unwrap(), std::fs::read(second.join(file)).unwrap(), "{file}");
    }
    let a: serde_json::Value = serde_json::from_slice(&std::fs::read(first.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(a["config"]["k"], 1);
    assert_eq!(a["corpora"][0]["sha256"].as_str().unwrap().len(), 64);

    std::fs::write(&corpus, "").unwrap();
    let changed = brm(&["train", "--from-manifest", p(&first.join("manifest.json")), "--out", p(&second)]);
    assert_eq!(changed.status.code(), Some(2));
}

#[test]
fn split_writes_folds() {
    let dir = TempDir::new().unwrap();
    let corpus = generate(dir.path(), "toy", 40, 6);
    let out = dir.path().join("split");
    ok(&["split", "--input", p(&corpus), "--out", p(&out), "--folds", "4", "--seed", "1", "--write-files"]);
    let split: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["splits"].as_array().unwrap().len(), 4);
    let test = read_conllu_file(out.join("fold-0/test.conllu")).unwrap();
    assert_eq!(test.len(), 4);
    assert!(out.join("manifest.json").is_file());
    let bad = brm(&["split", "--input", p(&corpus), "--out", p(&out), "--folds", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}
