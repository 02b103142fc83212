//! Hierarchical intent model.
//!
//! For each modality an intent tower alternates two steps per level:
//! degree-normalized neighbour averaging on the current graph, then a soft
//! assignment of the current nodes onto a smaller set of trainable
//! supernodes. The assignment also coarsens the graph for the next level.
//! An item is represented by its chained assignment distributions over all
//! levels; users get free trainable vectors of the same width, and both sides
//! are concatenated with plain ID embeddings for dot-product scoring.

mod checkpoint;
mod forward;
mod loss;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use checkpoint::{export_assignments, export_embeddings, load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{
    aggregate_base, aggregate_level, assign, coarsen_dense, fuse_and_score, item_repr, normalize_dense,
    tower_values, ModelInputs, ModelVars, ScoringSnapshot, TowerValues, TowerVars,
};
pub use loss::{loss_assignment, loss_bpr, loss_independence, total_loss, LossTerms, LossWeights};

/// Supernode counts per level, finest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelConfig {
    counts: Vec<usize>,
}

impl LevelConfig {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "levels must be a non-empty list of positive counts, got {counts:?}"
            )));
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn depth(&self) -> usize {
        self.counts.len()
    }

    /// Width of an item's concatenated intent representation.
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

impl Default for LevelConfig {
    fn default() -> Self {
        Self {
            counts: vec![32, 8, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub levels: LevelConfig,
    pub id_dim: usize,
    /// Sum the per-modality assignment and independence losses (otherwise
    /// average them).
    pub sum_modality_losses: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: LevelConfig::default(),
            id_dim: 64,
            sum_modality_losses: true,
        }
    }
}

/// Trainable supernodes of one modality, `supernodes[l]` is `K^(l+1) x D_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentTower {
    pub supernodes: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub levels: LevelConfig,
    pub towers: BTreeMap<String, IntentTower>,
    pub user_intent: BTreeMap<String, Array2<f64>>,
    pub id_user: Array2<f64>,
    pub id_item: Array2<f64>,
}

/// Uniform Xavier/Glorot initialization over `(rows, cols)`.
pub fn xavier_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

pub(crate) fn valid_modality_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl ModelParams {
    /// Fresh Xavier-initialized parameters. `feature_dims` maps each modality
    /// to its feature width.
    pub fn init(
        n_users: usize,
        n_items: usize,
        feature_dims: &BTreeMap<String, usize>,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        if feature_dims.is_empty() {
            return Err(Error::InvalidArgument("at least one modality is required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut towers = BTreeMap::new();
        let mut user_intent = BTreeMap::new();
        for (name, &dim) in feature_dims {
            if !valid_modality_name(name) {
                return Err(Error::InvalidArgument(format!("bad modality name `{name}`")));
            }
            let supernodes = config
                .levels
                .counts()
                .iter()
                .map(|&k| xavier_uniform(&mut rng, k, dim))
                .collect();
            towers.insert(name.clone(), IntentTower { supernodes });
            user_intent.insert(name.clone(), xavier_uniform(&mut rng, n_users, config.levels.total()));
        }
        let id_user = xavier_uniform(&mut rng, n_users, config.id_dim);
        let id_item = xavier_uniform(&mut rng, n_items, config.id_dim);
        Ok(Self {
            levels: config.levels.clone(),
            towers,
            user_intent,
            id_user,
            id_item,
        })
    }

    pub fn modalities(&self) -> impl Iterator<Item = &str> {
        self.towers.keys().map(String::as_str)
    }

    pub fn n_users(&self) -> usize {
        self.id_user.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.id_item.nrows()
    }

    pub fn id_dim(&self) -> usize {
        self.id_user.ncols()
    }

    /// Named parameter blocks in a fixed order: tower supernodes, user
    /// intents, then ID embeddings.
    pub fn blocks(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (m, tower) in &self.towers {
            for (l, x) in tower.supernodes.iter().enumerate() {
                out.push((format!("tower.{m}.level{}", l + 1), x));
            }
        }
        for (m, u) in &self.user_intent {
            out.push((format!("user_intent.{m}"), u));
        }
        out.push(("id_user".to_string(), &self.id_user));
        out.push(("id_item".to_string(), &self.id_item));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = Vec::new();
        for (m, tower) in self.towers.iter_mut() {
            for (l, x) in tower.supernodes.iter_mut().enumerate() {
                out.push((format!("tower.{m}.level{}", l + 1), x));
            }
        }
        for (m, u) in self.user_intent.iter_mut() {
            out.push((format!("user_intent.{m}"), u));
        }
        out.push(("id_user".to_string(), &mut self.id_user));
        out.push(("id_item".to_string(), &mut self.id_item));
        out
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.blocks_mut().into_iter().find(|(n, _)| n == name).map(|(_, b)| b)
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|v| v.is_finite()))
    }

    /// Keeps only the listed modalities.
    pub fn restrict(&self, modalities: &[String]) -> Result<Self> {
        let mut out = self.clone();
        for m in modalities {
            if !self.towers.contains_key(m) {
                return Err(Error::MissingModality(m.clone()));
            }
        }
        out.towers.retain(|k, _| modalities.contains(k));
        out.user_intent.retain(|k, _| modalities.contains(k));
        Ok(out)
    }
}
