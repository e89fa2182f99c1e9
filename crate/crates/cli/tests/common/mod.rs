#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn bert_vocab() -> PathBuf {
    fixture("bert-base-uncased-vocab.txt")
}

pub fn vocadapt<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_vocadapt"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn vocadapt")
}

/// Runs and asserts success; returns stdout.
pub fn run_ok<I, S>(args: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = vocadapt(args);
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn train(corpus: &Path, out: &Path, extra: &[&str]) {
    let mut args: Vec<std::ffi::OsString> = vec![
        "train-domain-vocab".into(),
        "--corpus".into(),
        corpus.into(),
        "--out".into(),
        out.into(),
    ];
    args.extend(extra.iter().map(Into::into));
    run_ok(args);
}

/// Trains on `corpus` into `dir`, then adapts the BERT vocabulary into `dir`.
pub fn train_and_adapt(corpus: &Path, dir: &Path, extra: &[&str]) {
    train(corpus, dir, &[]);
    let mut args: Vec<std::ffi::OsString> = vec![
        "adapt".into(),
        "--pretrained-vocab".into(),
        bert_vocab().into(),
        "--domain-vocab".into(),
        dir.join("domain_vocab.txt").into(),
        "--merges".into(),
        dir.join("merges.txt").into(),
        "--corpus".into(),
        corpus.into(),
        "--out".into(),
        dir.into(),
    ];
    args.extend(extra.iter().map(Into::into));
    run_ok(args);
}

pub fn schema(name: &str) -> serde_json::Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn assert_valid(schema_name: &str, instance: &serde_json::Value) {
    let validator = jsonschema::validator_for(&schema(schema_name)).expect("valid schema");
    let errors: Vec<String> = validator
        .iter_errors(instance)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}\n{instance:#}");
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
