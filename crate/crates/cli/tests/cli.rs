use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn forge(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .arg("--config")
        .arg(config)
        .args(["--workers", "1"])
        .args(args)
        .output()
        .expect("run forge")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

#[test]
fn unknown_config_key_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[train.mlm]\nlearning_rat = 0.1\n").unwrap();
    let out = forge(&cfg, &["stats", "--input", &path(&dir, "x.jsonl"), "--out", &path(&dir, "s.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn missing_input_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = forge(&smoke_config(), &["stats", "--input", &path(&dir, "absent.jsonl"), "--out", &path(&dir, "s.json")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("s.json").exists());
}

#[test]
fn train_test_overlap_exits_5() {
    let dir = TempDir::new().unwrap();
    let cfg = smoke_config();
    let synth = dir.path().join("synth");
    let sp = |n: &str| synth.join(n).to_string_lossy().into_owned();
    let steps: [Vec<String>; 3] = [
        vec!["synth".into(), "--out".into(), synth.to_string_lossy().into_owned()],
        vec!["ingest".into(), "--input".into(), sp("corpus.jsonl"), "--out".into(), path(&dir, "corpus.jsonl")],
        vec![
            "pretrain".into(), "--input".into(), path(&dir, "corpus.jsonl"), "--vocab".into(), path(&dir, "vocab.txt"),
            "--out".into(), path(&dir, "pre.ckpt"),
        ],
    ];
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let out = forge(&cfg, &args);
        assert!(out.status.success(), "{}: {}", step[0], String::from_utf8_lossy(&out.stderr));
    }
    let test = sp("vuln_test.jsonl");
    let out = forge(
        &cfg,
        &[
            "eval-vuln", "--model", &path(&dir, "pre.ckpt"), "--vocab", &path(&dir, "vocab.txt"), "--test", &test,
            "--train", &test, "--out", &path(&dir, "vuln.json"),
        ],
    );
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("validate_split"));
    assert!(!dir.path().join("vuln.json").exists());
}
