//! The `dhmp` binary: exit codes, output-directory handling, the run
//! manifest, reproducibility and resume.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "dataset": {"train": 3, "val": 1, "test": 1, "ood": 1, "grid_min": 5, "grid_max": 6, "ood_grid": 7, "steps": 8},
  "model": {"latent": 8, "hidden": 8},
  "train": {"checkpoint_interval": 4},
  "eval": {"horizon": 5}
}"#;

fn dhmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhmp"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("run_manifest.json")).unwrap()).unwrap()
}

/// Artifact hashes of a run, minus the files that record wall-clock time.
fn deterministic_hashes(dir: &Path) -> BTreeMap<String, String> {
    manifest(dir)["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            (
                a["path"].as_str().unwrap().to_string(),
                a["sha256"].as_str().unwrap().to_string(),
            )
        })
        .filter(|(p, _)| p != "report.json")
        .collect()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = root.join("tiny.json");
    std::fs::write(&config, TINY).unwrap();
    let data = root.join("data");
    let out = dhmp(&[
        "--config",
        s(&config),
        "--seed",
        "4",
        "--out",
        s(&data),
        "gen-data",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    Fixture {
        _tmp: tmp,
        root,
        config,
        data,
    }
}

#[test]
fn help_and_unknown_commands() {
    assert_eq!(code(&dhmp(&["--help"])), 0);
    assert_eq!(code(&dhmp(&["train", "--help"])), 0);
    assert_eq!(code(&dhmp(&["frobnicate"])), 2);
    assert_eq!(code(&dhmp(&["train"])), 2);
    assert_eq!(
        code(&dhmp(&[
            "eval",
            "--ood",
            "--split",
            "val",
            "--checkpoint",
            "x",
            "--dataset",
            "y"
        ])),
        2
    );
}

#[test]
fn config_errors_exit_2_and_are_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("run");
    let out = dhmp(&[
        "--config",
        "/definitely/not/here.json",
        "--out",
        s(&out_dir),
        "gen-data",
    ]);
    assert_eq!(code(&out), 2);
    let m = manifest(&out_dir);
    assert_eq!(m["exit_code"], 2);
    assert!(m["error"].as_str().unwrap().contains("not/here.json"));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"total_stepz": 5}}"#).unwrap();
    let out = dhmp(&[
        "--config",
        s(&bad),
        "--out",
        s(&tmp.path().join("b")),
        "gen-data",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("total_stepz"));

    std::fs::write(&bad, r#"{"dataset": {"grid_min": 9, "grid_max": 5}}"#).unwrap();
    let out = dhmp(&[
        "--config",
        s(&bad),
        "--out",
        s(&tmp.path().join("c")),
        "gen-data",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn output_directories_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.json");
    std::fs::write(&config, TINY).unwrap();
    let out_dir = tmp.path().join("data");
    let run = |force: bool| {
        let mut args = vec!["--config", s(&config), "--out", s(&out_dir)];
        if force {
            args.push("--force");
        }
        args.push("gen-data");
        code(&dhmp(&args))
    };
    assert_eq!(run(false), 0);
    assert_eq!(run(false), 2);
    assert_eq!(run(true), 0);

    let foreign = tmp.path().join("foreign");
    std::fs::create_dir(&foreign).unwrap();
    std::fs::write(foreign.join("notes.txt"), "keep me").unwrap();
    let out = dhmp(&[
        "--config",
        s(&config),
        "--out",
        s(&foreign),
        "--force",
        "gen-data",
    ]);
    assert_eq!(code(&out), 2);
    assert_eq!(
        std::fs::read_to_string(foreign.join("notes.txt")).unwrap(),
        "keep me"
    );
}

#[test]
fn same_seeds_give_identical_artifacts() {
    let f = fixture();
    let again = f.root.join("data2");
    assert_eq!(
        code(&dhmp(&[
            "--config",
            s(&f.config),
            "--seed",
            "4",
            "--out",
            s(&again),
            "gen-data"
        ])),
        0
    );
    assert_eq!(deterministic_hashes(&f.data), deterministic_hashes(&again));
    let other = f.root.join("data3");
    assert_eq!(
        code(&dhmp(&[
            "--config",
            s(&f.config),
            "--seed",
            "5",
            "--out",
            s(&other),
            "gen-data"
        ])),
        0
    );
    assert_ne!(deterministic_hashes(&f.data), deterministic_hashes(&other));

    let train = f.root.join("train");
    let args = [
        "--config",
        s(&f.config),
        "--seed",
        "1",
        "--out",
        s(&train),
        "--force",
        "train",
        "--dataset",
        s(&f.data),
        "--steps",
        "10",
    ];
    assert_eq!(code(&dhmp(&args)), 0);
    let first = deterministic_hashes(&train);
    assert!(first.contains_key("checkpoint.ckpt"));
    assert!(first.contains_key("metrics.jsonl"));
    assert!(first.contains_key("checkpoints/step_0000004.ckpt"));
    assert_eq!(code(&dhmp(&args)), 0);
    assert_eq!(first, deterministic_hashes(&train));

    let ckpt = train.join("checkpoint.ckpt");
    let export = |dir: &Path| {
        let out = dhmp(&[
            "--seed",
            "2",
            "--out",
            s(dir),
            "--force",
            "export",
            "--checkpoint",
            s(&ckpt),
            "--dataset",
            s(&f.data),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        deterministic_hashes(dir)
    };
    let e1 = export(&f.root.join("e1"));
    assert!(e1.contains_key("nodes_t0000.csv"));
    assert!(e1.contains_key("hierarchy_t0000_l1.csv"));
    assert_eq!(e1, export(&f.root.join("e2")));
}

#[test]
fn train_eval_and_resume() {
    let f = fixture();
    let full = f.root.join("full");
    let base = ["--config", s(&f.config), "--seed", "3"];
    let train = |out: &Path, extra: &[&str]| {
        let mut args = base.to_vec();
        args.extend([
            "--out",
            s(out),
            "train",
            "--dataset",
            s(&f.data),
            "--steps",
            "10",
        ]);
        args.extend(extra);
        let o = dhmp(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    train(&full, &[]);
    let part = f.root.join("part");
    train(&part, &["--stop-after", "5"]);
    let rest = f.root.join("rest");
    let ck = part.join("checkpoint.ckpt");
    train(&rest, &["--resume", s(&ck)]);
    assert_eq!(
        std::fs::read(full.join("checkpoint.ckpt")).unwrap(),
        std::fs::read(rest.join("checkpoint.ckpt")).unwrap()
    );
    let steps = |dir: &Path| {
        std::fs::read_to_string(dir.join("metrics.jsonl"))
            .unwrap()
            .lines()
            .filter(|l| l.contains("\"loss\""))
            .count()
    };
    assert_eq!((steps(&full), steps(&part), steps(&rest)), (10, 5, 5));

    let ev = f.root.join("eval");
    let ckpt = full.join("checkpoint.ckpt");
    let o = dhmp(&[
        "--seed",
        "7",
        "--out",
        s(&ev),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&f.data),
        "--repeats",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_slice(&std::fs::read(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert!(report["rmse_1"]["mean"].as_f64().unwrap().is_finite());
    assert_eq!(manifest(&ev)["seeds"], serde_json::json!([7, 8, 9]));

    let ood = f.root.join("ood");
    let o = dhmp(&[
        "--out",
        s(&ood),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&f.data),
        "--ood",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // a checkpoint only evaluates against the dataset it was trained on
    let other = f.root.join("other");
    assert_eq!(
        code(&dhmp(&[
            "--config",
            s(&f.config),
            "--seed",
            "99",
            "--out",
            s(&other),
            "gen-data"
        ])),
        0
    );
    let o = dhmp(&[
        "--out",
        s(&f.root.join("mismatch")),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&other),
    ]);
    assert_eq!(code(&o), 2);

    let o = dhmp(&[
        "--out",
        s(&f.root.join("missing")),
        "eval",
        "--checkpoint",
        s(&f.root.join("nope.ckpt")),
        "--dataset",
        s(&f.data),
    ]);
    assert_eq!(code(&o), 3);
    let o = dhmp(&[
        "--out",
        s(&f.root.join("nodata")),
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--dataset",
        s(&f.root),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sweeps_write_tables() {
    let f = fixture();
    let ab = f.root.join("ablate");
    let o = dhmp(&[
        "--config",
        s(&f.config),
        "--out",
        s(&ab),
        "ablate",
        "--dataset",
        s(&f.data),
        "--steps",
        "3",
        "--variants",
        "DHMP,FLAT",
        "--seeds",
        "0,1",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(ab.join("table.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv
        .lines()
        .nth(2)
        .unwrap()
        .starts_with("Flat-15-Pass (FLAT),"));

    let ks = f.root.join("ks");
    let o = dhmp(&[
        "--config",
        s(&f.config),
        "--out",
        s(&ks),
        "ksweep",
        "--dataset",
        s(&f.data),
        "--steps",
        "3",
        "--ks",
        "1,3",
        "--seeds",
        "0",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(ks.join("table.csv")).unwrap();
    let labels: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(labels, ["K=1", "K=3"]);
    assert_eq!(
        code(&dhmp(&[
            "--out",
            s(&f.root.join("v")),
            "ablate",
            "--dataset",
            s(&f.data),
            "--variants",
            "DHMP,M9"
        ])),
        2
    );
}
