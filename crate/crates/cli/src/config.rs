//! Run configuration: a TOML file of `[section]` tables, overridable from
//! the command line, resolved to absolute paths and hashed into a run id.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use intentgraph_core::cograph::GraphOptions;
use intentgraph_core::intents::{LevelConfig, LossWeights, ModelConfig};
use intentgraph_core::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `user_id,item_id[,timestamp]` CSV.
    pub interactions: PathBuf,
    /// Optional list of external item ids, one per line, in feature-row order.
    pub item_ids: Option<PathBuf>,
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
    pub feature_format: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            interactions: PathBuf::new(),
            item_ids: None,
            split_ratios: [0.8, 0.1, 0.1],
            split_seed: 0,
            feature_format: "raw-f32".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub min_cousers: usize,
    pub user_cap: usize,
    pub seed: u64,
}

impl Default for GraphSection {
    fn default() -> Self {
        let g = GraphOptions::default();
        Self {
            min_cousers: g.min_cousers,
            user_cap: g.user_cap,
            seed: g.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub levels: Vec<usize>,
    pub id_dim: usize,
    pub sum_modality_losses: bool,
    /// Empty means every modality under `[features]`.
    pub modalities: Vec<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            levels: m.levels.counts().to_vec(),
            id_dim: m.id_dim,
            sum_modality_losses: m.sum_modality_losses,
            modalities: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda_assignment: f64,
    pub lambda_independence: f64,
    pub lambda_l2: f64,
    pub seed: u64,
    pub refresh_interval: usize,
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            lambda_assignment: t.weights.assignment,
            lambda_independence: t.weights.independence,
            lambda_l2: t.weights.l2,
            seed: t.seed,
            refresh_interval: t.refresh_interval,
            clip_norm: t.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub per_user: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            per_user: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "runs".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    /// Modality name to feature file.
    pub features: BTreeMap<String, PathBuf>,
    pub graph: GraphSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

/// Parses a single override value; bare words that are not valid TOML are
/// taken as strings.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` overrides to a raw table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (path, value) = o
            .split_once('=')
            .with_context(|| format!("override `{o}` is not `section.key=value`"))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .with_context(|| format!("override key `{path}` lacks a section"))?;
        let entry = table
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let toml::Value::Table(t) = entry else {
            bail!("`{section}` is not a section");
        };
        t.insert(key.trim().to_string(), parse_value(value.trim()));
    }
    Ok(())
}

fn absolutize(base: &Path, p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() || p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Reads `path`, applies overrides and resolves relative paths against the
    /// config file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        apply_overrides(&mut table, overrides)?;
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let base = if base.as_os_str().is_empty() {
            std::env::current_dir()?
        } else {
            fs::canonicalize(&base).with_context(|| format!("resolving {}", base.display()))?
        };
        cfg.data.interactions = absolutize(&base, &cfg.data.interactions);
        cfg.data.item_ids = cfg.data.item_ids.as_deref().map(|p| absolutize(&base, p));
        for p in cfg.features.values_mut() {
            *p = absolutize(&base, p);
        }
        cfg.output.dir = absolutize(&base, &cfg.output.dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.interactions.as_os_str().is_empty() {
            bail!("data.interactions is required");
        }
        if self.features.is_empty() {
            bail!("at least one [features] entry is required");
        }
        for m in &self.model.modalities {
            if !self.features.contains_key(m) {
                bail!("modality `{m}` has no [features] entry");
            }
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            bail!("eval.ks must be a non-empty list of positive integers");
        }
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            min_cousers: self.graph.min_cousers,
            user_cap: self.graph.user_cap,
            seed: self.graph.seed,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            weights: LossWeights {
                assignment: t.lambda_assignment,
                independence: t.lambda_independence,
                l2: t.lambda_l2,
            },
            model: ModelConfig {
                levels: LevelConfig::new(self.model.levels.clone())?,
                id_dim: self.model.id_dim,
                sum_modality_losses: self.model.sum_modality_losses,
            },
            modalities: self.model.modalities.clone(),
            seed: t.seed,
            refresh_interval: t.refresh_interval,
            clip_norm: t.clip_norm,
            ..TrainConfig::default()
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash over everything that determines a trained model; evaluation and
    /// output settings are excluded so a run's reports land next to it.
    pub fn run_id(&self) -> String {
        #[derive(Serialize)]
        struct Identity<'a> {
            data: &'a DataSection,
            features: &'a BTreeMap<String, PathBuf>,
            graph: &'a GraphSection,
            model: &'a ModelSection,
            train: &'a TrainSection,
        }
        let id = Identity {
            data: &self.data,
            features: &self.features,
            graph: &self.graph,
            model: &self.model,
            train: &self.train,
        };
        let text = toml::to_string(&id).expect("identity serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output.dir.join(self.run_id())
    }

    /// Creates the run directory and writes the resolved config into it as
    /// `<command>_config.toml`.
    pub fn prepare_run_dir(&self, command: &str) -> Result<PathBuf> {
        let dir = self.run_dir();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{command}_config.toml"));
        fs::write(&path, self.to_toml()).with_context(|| format!("writing {}", path.display()))?;
        Ok(dir)
    }
}
