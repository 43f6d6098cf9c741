use std::path::Path;
use std::process::{Command, Output};

fn pagewise(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pagewise")).current_dir(dir).args(args).output().unwrap()
}

const SMALL: &str = "n_items = 50
n_categories = 5
log_sessions = 20
log_pages = 3
epochs = 1
data_dir = data
";

#[test]
fn missing_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = pagewise(dir.path(), &["generate-data", "--config", "nope.txt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn unknown_config_key_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.txt"), "learning_rate = 3\n").unwrap();
    let out = pagewise(dir.path(), &["generate-data", "--config", "bad.txt"]);
    assert!(!out.status.success());
}

#[test]
fn sessions_flag_is_rejected_where_meaningless() {
    let dir = tempfile::tempdir().unwrap();
    let out = pagewise(dir.path(), &["eval-offline", "--sessions", "3"]);
    assert!(!out.status.success());
}

#[test]
fn ablate_reports_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.txt"), SMALL).unwrap();
    let out = pagewise(dir.path(), &["generate-data", "--config", "small.txt", "--out", "data"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = pagewise(dir.path(), &["ablate", "--config", "small.txt", "--out", "abl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let mut want: Vec<String> = (1..=7).map(|k| format!("DeepPage-{k}")).collect();
    want.push("DeepPage".into());
    assert_eq!(labels, want);
    assert!(dir.path().join("abl/manifest.txt").exists());
}

#[test]
fn eval_online_with_one_length_writes_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "n_items = 40\nn_categories = 4\ntrain_sessions = 3\neval_sessions = 2\ncheckpoint = run/checkpoint.bin\n";
    std::fs::write(dir.path().join("c.txt"), cfg).unwrap();
    let out = pagewise(dir.path(), &["train-online", "--config", "c.txt", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = pagewise(dir.path(), &["eval-online", "--config", "c.txt", "--session-length", "7", "--out", "ev"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ev/online.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some("7")));
}
