use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn dfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfm"))
        .args(args)
        .env_remove("DFM_SEED")
        .output()
        .expect("dfm runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Hash over relative paths and contents, in sorted order.
fn dir_hash(root: &Path) -> Vec<u8> {
    fn walk(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                walk(&path, out);
            } else {
                out.push(path);
            }
        }
    }
    let mut files = Vec::new();
    walk(root, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(root).unwrap().to_str().unwrap().as_bytes());
        h.update(fs::read(&f).unwrap());
    }
    h.finalize().to_vec()
}

#[test]
fn gen_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c, d) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"), tmp.path().join("d"));
    for (dir, seed, threads) in [(&a, "1", "1"), (&b, "1", "3"), (&c, "2", "1")] {
        let o = dfm(&["gen", "--kind", "seg", "--n", "10", "--seed", seed, "--threads", threads, "--out", p(dir)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(dir_hash(&a), dir_hash(&b));
    assert_ne!(dir_hash(&a), dir_hash(&c));
    let o = Command::new(env!("CARGO_BIN_EXE_dfm"))
        .args(["gen", "--kind", "seg", "--n", "10", "--out", p(&d)])
        .env("DFM_SEED", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(dir_hash(&a), dir_hash(&d));
}

#[test]
fn pipeline_output_verifies_strict() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&dfm(&["gen", "--kind", "seg", "--n", "2", "--seed", "5", "--out", p(&data)])), 0);
    let part = data.join("images/000000.png");
    let out = tmp.path().join("out.png");
    let report = tmp.path().join("r.json");

    let sharp = dfm(&["verify", "--in", p(&part), "--strict"]);
    assert_eq!(code(&sharp), 1);
    assert!(String::from_utf8_lossy(&sharp.stdout).contains("violations"));

    let o = dfm(&["pipeline", "--in", p(&part), "--backend", "rule", "--report", p(&report), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(&report).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["wall_count"], 3);

    let v = dfm(&["verify", "--in", p(&out), "--strict", "--format", "json"]);
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stdout));
    let json: serde_json::Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(json["clean"], true);

    assert_eq!(code(&dfm(&["pipeline", "--in", p(&part), "--report", p(&report)])), 0);
    assert_eq!(fs::read(&report).unwrap(), first);
}

#[test]
fn eval_reports_oracle_ap() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&dfm(&["gen", "--n", "3", "--seed", "9", "--out", p(&data)])), 0);
    let o = dfm(&["eval", "--dataset", p(&data), "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["ap"]["ap"], 100.0);
    assert!(json["ap"]["ap_small"].is_null());
    assert_eq!(code(&dfm(&["eval", "--dataset", p(&data), "--jitter-px", "3"])), 2);
}

#[test]
fn usage_and_io_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&dfm(&["verify"])), 2);
    assert_eq!(code(&dfm(&["gen", "--out", p(&tmp.path().join("x"))])), 2);
    assert_eq!(code(&dfm(&["verify", "--in", p(&tmp.path().join("missing.png"))])), 2);
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 1, "unknown": true}"#).unwrap();
    assert_eq!(code(&dfm(&["--config", p(&cfg), "bench", "--n", "1"])), 2);
}

#[test]
fn config_supplies_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 4, "format": "json", "gen": {"n_examples": 2, "walls_per_part": 5}}"#).unwrap();
    let data = tmp.path().join("data");
    let o = dfm(&["--config", p(&cfg), "gen", "--out", p(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 4);
    assert_eq!(manifest["config"]["walls_per_part"], 5);
    assert_eq!(manifest["examples"].as_array().unwrap().len(), 2);
    let o = dfm(&["--config", p(&cfg), "--seed", "7", "gen", "--n", "1", "--out", p(&tmp.path().join("e"))]);
    assert_eq!(code(&o), 0);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["examples"], 1);
}

#[test]
fn modify_and_render_write_images() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("t");
    assert_eq!(code(&dfm(&["gen", "--kind", "trans", "--n", "3", "--seed", "2", "--out", p(&data)])), 0);
    let out = tmp.path().join("m.png");
    let o = dfm(&["modify", "--in", p(&data.join("input/000000.png")), "--kind", "thin", "--out", p(&out), "--strict"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(code(&dfm(&["verify", "--in", p(&out), "--strict"])), 0);
    let sheet = tmp.path().join("s.png");
    assert_eq!(code(&dfm(&["render", "--in", p(&data.join("input/000000.png")), "--after", p(&out), "--out", p(&sheet)])), 0);
    assert!(sheet.exists());
}
