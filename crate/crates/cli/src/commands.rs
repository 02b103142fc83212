use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;

use intentgraph_core::cograph::{build_cograph, CoGraph, GraphOptions};
use intentgraph_core::eval::rank_users;
use intentgraph_core::ingest::{
    generate_synthetic, load_features, load_interactions, save_interactions, split_dataset, write_raw_f32, Dataset,
    FeatureFormat, IdMap, Split, SynthConfig,
};
use intentgraph_core::intents::{
    export_assignments, export_embeddings, load_checkpoint, save_checkpoint, ModelInputs, ScoringSnapshot,
};
use intentgraph_core::trainer::{history_csv, train, StopReason};

use crate::config::RunConfig;

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn read_item_ids(path: &Path) -> Result<Vec<u64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ids = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        ids.push(
            line.parse::<u64>()
                .with_context(|| format!("{}:{}: bad item id `{line}`", path.display(), n + 1))?,
        );
    }
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ids.len() {
        bail!("{} lists an item id twice", path.display());
    }
    Ok(ids)
}

/// Modalities a command works with: the configured subset, else all.
fn selected_modalities(cfg: &RunConfig) -> Vec<String> {
    if cfg.model.modalities.is_empty() {
        cfg.features.keys().cloned().collect()
    } else {
        cfg.model.modalities.clone()
    }
}

/// Loads interactions, splits them and attaches the feature matrices.
pub fn load_dataset(cfg: &RunConfig, modalities: &[String]) -> Result<Dataset> {
    let mut log = load_interactions(&cfg.data.interactions)?;
    let order = match &cfg.data.item_ids {
        Some(path) => {
            let ids = read_item_ids(path)?;
            log = log.with_items(IdMap::from_external(ids.iter().copied()))?;
            Some(ids)
        }
        None => None,
    };
    let [a, b, c] = cfg.data.split_ratios;
    let mut ds = split_dataset(&log.interactions, log.n_users(), log.n_items(), (a, b, c), cfg.data.split_seed)?;
    if ds.train().is_empty() {
        bail!("train split is empty");
    }
    let format: FeatureFormat = cfg.data.feature_format.parse()?;
    for m in modalities {
        let path = cfg.features.get(m).with_context(|| format!("modality `{m}` has no feature file"))?;
        let raw = load_features(path, format, Some(ds.n_items()))?;
        let matrix = match &order {
            Some(ids) => {
                let mut out = Array2::zeros(raw.dim());
                for (row, id) in ids.iter().enumerate() {
                    let dense = log.items.dense(*id).expect("map built from these ids");
                    out.row_mut(dense).assign(&raw.row(row));
                }
                out
            }
            None => raw,
        };
        ds.add_features(m, matrix)?;
    }
    Ok(ds)
}

fn graph_summary(g: &CoGraph, k: usize) -> String {
    let isolated = g.isolated().iter().filter(|&&i| i).count();
    let hist: Vec<String> = g.degree_histogram().iter().map(|(d, n)| format!("{d}:{n}")).collect();
    format!(
        "min_cousers={k} nodes={} edges={} isolated={isolated} degree_histogram={}",
        g.n_nodes(),
        g.n_edges(),
        hist.join(" ")
    )
}

/// Parses `5` or an inclusive range `3..7`.
pub fn parse_threshold_range(s: &str) -> Result<Vec<usize>> {
    let parse = |t: &str| t.trim().parse::<usize>().with_context(|| format!("bad threshold `{t}`"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if lo == 0 || lo > hi {
        bail!("threshold range `{s}` must be positive and ascending");
    }
    Ok((lo..=hi).collect())
}

pub fn build_graph(cfg: &RunConfig, thresholds: Option<Vec<usize>>) -> Result<()> {
    let ds = load_dataset(cfg, &[])?;
    let dir = cfg.prepare_run_dir("build_graph")?;
    let thresholds = thresholds.unwrap_or_else(|| vec![cfg.graph.min_cousers]);
    for k in thresholds {
        let opts = GraphOptions {
            min_cousers: k,
            ..cfg.graph_options()
        };
        let g = build_cograph(ds.train(), ds.n_items(), opts)?;
        let path = dir.join(format!("graph_k{k}.csv"));
        g.save_csv(&path)?;
        println!("{} file={}", graph_summary(&g, k), path.display());
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let modalities = selected_modalities(cfg);
    let ds = load_dataset(cfg, &modalities)?;
    let graph = build_cograph(ds.train(), ds.n_items(), cfg.graph_options())?;
    let dir = cfg.prepare_run_dir("train")?;
    log::info!("{}", graph_summary(&graph, cfg.graph.min_cousers));
    let init = match resume {
        Some(path) => Some(
            load_checkpoint(path)
                .with_context(|| format!("loading checkpoint {}", path.display()))?
                .params,
        ),
        None => None,
    };
    let config = cfg.train_config()?;
    let outcome = train(&ds, &graph, &config, init)?;

    let stop = match &outcome.stop {
        StopReason::Patience => "patience".to_string(),
        StopReason::MaxEpochs => "max_epochs".to_string(),
        StopReason::NonFiniteLoss { epoch } => format!("non_finite_loss@{epoch}"),
    };
    let meta = BTreeMap::from([
        ("run_id".to_string(), cfg.run_id()),
        ("best_epoch".to_string(), outcome.best_epoch.to_string()),
        ("best_val_recall10".to_string(), outcome.best_val_recall.to_string()),
        ("stop".to_string(), stop.clone()),
    ]);
    let ckpt = dir.join("checkpoint");
    save_checkpoint(&ckpt, &outcome.params, &meta)?;
    write_file(&dir.join("history.csv"), history_csv(&outcome.history))?;
    println!(
        "run={} epochs={} best_epoch={} best_val_recall10={:.6} stop={stop} checkpoint={}",
        cfg.run_id(),
        outcome.history.len(),
        outcome.best_epoch,
        outcome.best_val_recall,
        ckpt.display()
    );
    Ok(())
}

fn checkpoint_path(cfg: &RunConfig, given: Option<&Path>) -> PathBuf {
    given.map(Path::to_path_buf).unwrap_or_else(|| cfg.run_dir().join("checkpoint"))
}

/// Loads a checkpoint with the dataset and graph it was trained against.
fn restore(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<(Dataset, ModelInputs, intentgraph_core::ModelParams)> {
    let path = checkpoint_path(cfg, checkpoint);
    if !path.join("manifest.txt").is_file() {
        bail!("no checkpoint at {}", path.display());
    }
    let ckpt = load_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let modalities: Vec<String> = ckpt.params.modalities().map(str::to_string).collect();
    let ds = load_dataset(cfg, &modalities)?;
    if ckpt.params.n_users() != ds.n_users() || ckpt.params.n_items() != ds.n_items() {
        bail!(
            "checkpoint covers {} users x {} items, dataset has {} x {}",
            ckpt.params.n_users(),
            ckpt.params.n_items(),
            ds.n_users(),
            ds.n_items()
        );
    }
    let graph = build_cograph(ds.train(), ds.n_items(), cfg.graph_options())?;
    let inputs = ModelInputs::new(&graph, ds.features(), &modalities)?;
    Ok((ds, inputs, ckpt.params))
}

pub fn evaluate(cfg: &RunConfig, checkpoint: Option<&Path>, split: Split) -> Result<()> {
    let (ds, inputs, params) = restore(cfg, checkpoint)?;
    let snapshot = ScoringSnapshot::from_params(&params, &inputs)?;
    let report = rank_users(&snapshot, &ds, split, &cfg.eval.ks)?;
    let dir = cfg.prepare_run_dir("evaluate")?;
    let name = match split {
        Split::Validation => "validation",
        _ => "test",
    };
    let csv = report.to_csv();
    write_file(&dir.join(format!("report_{name}.csv")), &csv)?;
    if cfg.eval.per_user {
        write_file(&dir.join(format!("report_{name}_per_user.csv")), report.per_user_csv())?;
    }
    print!("{csv}");
    println!("evaluated={} skipped={}", report.n_evaluated, report.n_skipped);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportKind {
    Embeddings,
    Assignments,
}

pub fn export(cfg: &RunConfig, checkpoint: Option<&Path>, what: ExportKind) -> Result<()> {
    let (_, inputs, params) = restore(cfg, checkpoint)?;
    let dir = cfg.prepare_run_dir("export")?;
    let (sub, files) = match what {
        ExportKind::Embeddings => {
            let d = dir.join("export_embeddings");
            (d.clone(), export_embeddings(&d, &params, &inputs)?)
        }
        ExportKind::Assignments => {
            let d = dir.join("export_assignments");
            (d.clone(), export_assignments(&d, &params, &inputs)?)
        }
    };
    for f in files {
        println!("{}", sub.join(f).display());
    }
    Ok(())
}

pub struct SynthArgs {
    pub users: usize,
    pub items: usize,
    pub levels: Vec<usize>,
    pub density: f64,
    pub seed: u64,
    pub feature_dim: usize,
    pub modalities: Vec<String>,
    pub out: PathBuf,
}

/// Writes a synthetic dataset plus a ready-to-use `config.toml`.
pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut sc = SynthConfig::new(args.users, args.items, args.levels.clone(), args.density, args.seed);
    sc.feature_dim = args.feature_dim;
    sc.modalities = args.modalities.clone();
    let data = generate_synthetic(&sc)?;
    fs::create_dir_all(args.out.join("features")).with_context(|| format!("creating {}", args.out.display()))?;
    save_interactions(&data.log, &args.out.join("interactions.csv"))?;
    let ids: String = (0..args.items).map(|i| format!("{i}\n")).collect();
    write_file(&args.out.join("item_ids.txt"), ids)?;

    let mut planted = String::from("item_id");
    for l in 0..args.levels.len() {
        write!(planted, ",level{}_group", l + 1).unwrap();
    }
    planted.push('\n');
    for item in 0..args.items {
        write!(planted, "{item}").unwrap();
        for g in &data.planted.groups {
            write!(planted, ",{}", g[item]).unwrap();
        }
        planted.push('\n');
    }
    write_file(&args.out.join("planted.csv"), planted)?;

    let mut config = String::new();
    writeln!(config, "[data]\ninteractions = \"interactions.csv\"\nitem_ids = \"item_ids.txt\"").unwrap();
    writeln!(config, "split_seed = {}\nfeature_format = \"raw-f32\"\n\n[features]", args.seed).unwrap();
    for m in &args.modalities {
        let path = args.out.join("features").join(format!("{m}.f32"));
        write_raw_f32(data.dataset.modality(m)?, &path)?;
        writeln!(config, "{m} = \"features/{m}.f32\"").unwrap();
    }
    let levels: Vec<String> = args.levels.iter().map(usize::to_string).collect();
    writeln!(config, "\n[model]\nlevels = [{}]\n\n[output]\ndir = \"runs\"", levels.join(", ")).unwrap();
    write_file(&args.out.join("config.toml"), config)?;
    println!(
        "users={} items={} interactions={} train={} validation={} test={} config={}",
        args.users,
        args.items,
        data.log.interactions.len(),
        data.dataset.train().len(),
        data.dataset.validation().len(),
        data.dataset.test().len(),
        args.out.join("config.toml").display()
    );
    Ok(())
}
