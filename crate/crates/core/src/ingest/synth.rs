//! Synthetic implicit-feedback data with a planted intent hierarchy.
//!
//! Items are dealt evenly onto `levels[0]` leaf intents. Leaf `j` belongs to
//! level-`l` group `j * levels[l] / levels[0]`, so the last entry of `levels`
//! gives the coarse intents. Each user prefers one coarse intent and, inside
//! it, one leaf. A user's in-intent items are drawn without replacement with
//! the preferred leaf weighted by `leaf_concentration`; the remaining
//! `1 - in_intent_share` of interactions are uniform over other items.
//!
//! Features per modality are hierarchical Gaussian centroids plus noise.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{split_dataset, Dataset, IdMap, Interaction, InteractionLog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub levels: Vec<usize>,
    pub density: f64,
    pub seed: u64,
    pub modalities: Vec<String>,
    pub feature_dim: usize,
    pub in_intent_share: f64,
    /// Sampling weight of preferred-leaf items relative to the rest of the
    /// preferred coarse intent.
    pub leaf_concentration: f64,
    pub coarse_scale: f64,
    pub leaf_scale: f64,
    pub noise_scale: f64,
    pub split_ratios: (f64, f64, f64),
}

impl SynthConfig {
    pub fn new(n_users: usize, n_items: usize, levels: Vec<usize>, density: f64, seed: u64) -> Self {
        Self {
            n_users,
            n_items,
            levels,
            density,
            seed,
            modalities: vec!["visual".to_string()],
            feature_dim: 16,
            in_intent_share: 0.9,
            leaf_concentration: 50.0,
            coarse_scale: 1.0,
            leaf_scale: 1.0,
            noise_scale: 0.25,
            split_ratios: (0.8, 0.1, 0.1),
        }
    }
}

/// Ground-truth labels the generator planted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedIntents {
    /// `groups[l][item]`: item's group at level `l`; level 0 are the leaves.
    pub groups: Vec<Vec<usize>>,
    pub user_coarse: Vec<usize>,
    pub user_leaf: Vec<usize>,
}

impl PlantedIntents {
    pub fn leaf_of_item(&self) -> &[usize] {
        &self.groups[0]
    }

    pub fn coarse_of_item(&self) -> &[usize] {
        self.groups.last().expect("at least one level")
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub log: InteractionLog,
    pub dataset: Dataset,
    pub planted: PlantedIntents,
}

fn gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Builds a dataset with planted structure, split by `split_ratios` with the
/// same seed.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    if cfg.levels.is_empty() || cfg.levels.contains(&0) {
        return Err(Error::InvalidArgument("levels must be non-empty and positive".into()));
    }
    if !(cfg.density > 0.0 && cfg.density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density {} not in (0, 1]", cfg.density)));
    }
    if cfg.n_users == 0 || cfg.n_items == 0 {
        return Err(Error::InvalidArgument("need at least one user and one item".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_leaf = cfg.levels[0];
    let n_coarse = *cfg.levels.last().unwrap();

    let mut order: Vec<usize> = (0..cfg.n_items).collect();
    order.shuffle(&mut rng);
    let mut leaf_of_item = vec![0; cfg.n_items];
    for (pos, &item) in order.iter().enumerate() {
        leaf_of_item[item] = pos % n_leaf;
    }
    let groups: Vec<Vec<usize>> = cfg
        .levels
        .iter()
        .map(|&k| leaf_of_item.iter().map(|&leaf| leaf * k / n_leaf).collect())
        .collect();
    let coarse_of_item = groups.last().unwrap();
    let coarse_of_leaf: Vec<usize> = (0..n_leaf).map(|j| j * n_coarse / n_leaf).collect();

    let mut items_in_coarse = vec![Vec::new(); n_coarse];
    for (item, &c) in coarse_of_item.iter().enumerate() {
        items_in_coarse[c].push(item);
    }
    let populated: Vec<usize> = (0..n_coarse).filter(|&c| !items_in_coarse[c].is_empty()).collect();

    let mut interactions = Vec::new();
    let mut user_coarse = Vec::with_capacity(cfg.n_users);
    let mut user_leaf = Vec::with_capacity(cfg.n_users);
    for user in 0..cfg.n_users {
        let coarse = populated[rng.random_range(0..populated.len())];
        let leaves: Vec<usize> = {
            let mut l: Vec<usize> = items_in_coarse[coarse].iter().map(|&i| leaf_of_item[i]).collect();
            l.sort_unstable();
            l.dedup();
            l
        };
        let leaf = leaves[rng.random_range(0..leaves.len())];
        user_coarse.push(coarse);
        user_leaf.push(leaf);

        let preferred = &items_in_coarse[coarse];
        let n_in = ((cfg.in_intent_share * cfg.density * preferred.len() as f64).round() as usize)
            .clamp(1, preferred.len());
        // Efraimidis-Spirakis weighted sampling without replacement.
        let mut keyed: Vec<(f64, usize)> = preferred
            .iter()
            .map(|&item| {
                let w = if leaf_of_item[item] == leaf { cfg.leaf_concentration } else { 1.0 };
                let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                (u.powf(1.0 / w), item)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = keyed[..n_in].iter().map(|&(_, i)| i).collect();

        let mut others: Vec<usize> = (0..cfg.n_items).filter(|&i| coarse_of_item[i] != coarse).collect();
        let n_out = ((n_in as f64 * (1.0 - cfg.in_intent_share) / cfg.in_intent_share).round() as usize)
            .min(others.len());
        others.shuffle(&mut rng);
        chosen.extend_from_slice(&others[..n_out]);
        chosen.sort_unstable();
        interactions.extend(chosen.into_iter().map(|item| Interaction::new(user, item)));
    }

    let mut dataset = split_dataset(&interactions, cfg.n_users, cfg.n_items, cfg.split_ratios, cfg.seed)?;
    for modality in &cfg.modalities {
        let coarse_c = gaussian_rows(&mut rng, n_coarse, cfg.feature_dim, cfg.coarse_scale);
        let mut leaf_c = gaussian_rows(&mut rng, n_leaf, cfg.feature_dim, cfg.leaf_scale);
        for (j, mut row) in leaf_c.rows_mut().into_iter().enumerate() {
            row += &coarse_c.row(coarse_of_leaf[j]);
        }
        let mut feats = gaussian_rows(&mut rng, cfg.n_items, cfg.feature_dim, cfg.noise_scale);
        for (i, mut row) in feats.rows_mut().into_iter().enumerate() {
            row += &leaf_c.row(leaf_of_item[i]);
        }
        dataset.add_features(modality, feats)?;
    }

    Ok(SyntheticData {
        log: InteractionLog {
            interactions,
            users: IdMap::identity(cfg.n_users),
            items: IdMap::identity(cfg.n_items),
        },
        dataset,
        planted: PlantedIntents {
            groups,
            user_coarse,
            user_leaf,
        },
    })
}
