use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use intentgraph_core::ingest::{load_features, FeatureFormat};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intentgraph"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small synthetic dataset with two modalities; returns (tempdir, config path).
fn synth() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("data");
    ok(&[
        "synth",
        "--users",
        "60",
        "--items",
        "80",
        "--levels",
        "4,2",
        "--density",
        "0.1",
        "--seed",
        "3",
        "--feature-dim",
        "6",
        "--modalities",
        "visual,text",
        "--out",
        out.to_str().unwrap(),
    ]);
    let cfg = out.join("config.toml");
    (tmp, cfg)
}

fn base_args<'a>(cmd: &'a str, cfg: &'a Path) -> Vec<&'a str> {
    vec![
        cmd,
        "-c",
        cfg.to_str().unwrap(),
        "--set",
        "graph.min_cousers=1",
        "--set",
        "train.max_epochs=3",
        "--set",
        "model.id_dim=8",
        "--set",
        "train.batch_size=128",
    ]
}

/// The single run directory under `runs/` holding `file`.
fn run_dir_with(cfg: &Path, file: &str) -> PathBuf {
    let runs = cfg.parent().unwrap().join("runs");
    let mut hits: Vec<PathBuf> = fs::read_dir(runs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.join(file).exists())
        .collect();
    assert_eq!(hits.len(), 1, "expected one run dir with {file}");
    hits.pop().unwrap()
}

#[test]
fn graph_sweep_is_reproducible() {
    let (_tmp, cfg) = synth();
    let mut args = base_args("build-graph", &cfg);
    args.extend(["--min-cousers", "3..7"]);
    let stdout = ok(&args);
    assert_eq!(stdout.lines().count(), 5);
    for k in 3..=7 {
        assert!(stdout.contains(&format!("min_cousers={k} ")), "{stdout}");
    }
    let dir = run_dir_with(&cfg, "graph_k3.csv");
    let first: Vec<Vec<u8>> = (3..=7)
        .map(|k| fs::read(dir.join(format!("graph_k{k}.csv"))).unwrap())
        .collect();
    ok(&args);
    for (k, bytes) in (3..=7).zip(&first) {
        assert_eq!(&fs::read(dir.join(format!("graph_k{k}.csv"))).unwrap(), bytes);
    }
    assert!(dir.join("build_graph_config.toml").exists());
}

#[test]
fn train_evaluate_export_roundtrip() {
    let (_tmp, cfg) = synth();
    let mut train = base_args("train", &cfg);
    train.extend(["--no-l1", "--no-l2"]);
    let stdout = ok(&train);
    assert!(stdout.contains("best_epoch="), "{stdout}");

    let dir = run_dir_with(&cfg, "checkpoint");
    let resolved = fs::read_to_string(dir.join("train_config.toml")).unwrap();
    let table: toml::Table = toml::from_str(&resolved).unwrap();
    let t = table["train"].as_table().unwrap();
    assert_eq!(t["lambda_assignment"].as_float(), Some(0.0));
    assert_eq!(t["lambda_independence"].as_float(), Some(0.0));
    let history = fs::read_to_string(dir.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);

    let mut eval = base_args("evaluate", &cfg);
    eval.extend(["--set", "train.lambda_assignment=0.0", "--set", "train.lambda_independence=0.0"]);
    eval.extend(["--ks", "1,5,10"]);
    let a = ok(&eval);
    let report = fs::read(dir.join("report_test.csv")).unwrap();
    let b = ok(&eval);
    assert_eq!(a, b);
    assert_eq!(fs::read(dir.join("report_test.csv")).unwrap(), report);
    let text = String::from_utf8(report).unwrap();
    for k in ["1", "5", "10"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("recall,{k},"))), "{text}");
    }

    let mut export = base_args("export", &cfg);
    export.extend(["--set", "train.lambda_assignment=0.0", "--set", "train.lambda_independence=0.0"]);
    export.extend(["--what", "assignments"]);
    ok(&export);
    let adir = dir.join("export_assignments");
    for (level, k) in [(1, 4), (2, 2)] {
        let csv = fs::read_to_string(adir.join(format!("assignments_visual_level{level}.csv"))).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 80);
        for (i, row) in rows.iter().enumerate() {
            let f: Vec<&str> = row.split(',').collect();
            assert_eq!(f[0].parse::<usize>().unwrap(), i);
            assert!(f[1].parse::<usize>().unwrap() < k);
        }
    }

    export.pop();
    export.push("embeddings");
    ok(&export);
    let g1 = load_features(&adir.join("gamma_visual_level1.f32"), FeatureFormat::RawF32, Some(80)).unwrap();
    let g2 = load_features(&adir.join("gamma_visual_level2.f32"), FeatureFormat::RawF32, Some(4)).unwrap();
    let repr = load_features(
        &dir.join("export_embeddings").join("item_repr_visual.f32"),
        FeatureFormat::RawF32,
        Some(80),
    )
    .unwrap();
    assert_eq!(repr.ncols(), 6);
    let chain2 = g1.dot(&g2);
    for i in 0..80 {
        for c in 0..2 {
            let diff = (chain2[[i, c]] - repr[[i, 4 + c]]).abs();
            assert!(diff < 1e-6, "item {i} col {c}: {diff}");
        }
    }
}

#[test]
fn training_is_deterministic() {
    let (_tmp, cfg) = synth();
    let histories: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            ok(&base_args("train", &cfg));
            let dir = run_dir_with(&cfg, "history.csv");
            let h = fs::read(dir.join("history.csv")).unwrap();
            fs::remove_dir_all(dir).unwrap();
            h
        })
        .collect();
    assert_eq!(histories[0], histories[1]);
}

#[test]
fn modality_subset_and_levels() {
    let (_tmp, cfg) = synth();
    let mut args = base_args("train", &cfg);
    args.extend(["--modalities", "visual", "--levels", "6,3,2"]);
    ok(&args);
    let dir = run_dir_with(&cfg, "checkpoint");
    let manifest = fs::read_to_string(dir.join("checkpoint").join("manifest.txt")).unwrap();
    assert!(manifest.contains("levels = 6,3,2"), "{manifest}");
    assert!(!manifest.contains("text"), "{manifest}");
}

#[test]
fn missing_checkpoint_is_an_error() {
    let (_tmp, cfg) = synth();
    let out = run(&base_args("evaluate", &cfg));
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.contains("no checkpoint"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn empty_interactions_fail_cleanly() {
    let (_tmp, cfg) = synth();
    fs::write(cfg.parent().unwrap().join("interactions.csv"), "").unwrap();
    let out = run(&base_args("build-graph", &cfg));
    assert!(!out.status.success());
    let err = stderr_of(&out);
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let (_tmp, cfg) = synth();
    let mut args = base_args("build-graph", &cfg);
    args.extend(["--set", "train.learning_rat=0.1"]);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_of(&out);
    assert!(err.contains("learning_rat"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn bad_flag_exits_with_usage_code() {
    let out = run(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_of(&out).trim_end().lines().count(), 1);
}
