//! Interaction logs, item feature matrices, train/validation/test splits and
//! BPR triplet sampling.
//!
//! External ids in interaction files may be sparse; they are re-indexed to
//! dense `0..N` / `0..M` ids sorted by external id. The [`IdMap`]s are kept so
//! artifacts can be mapped back.

mod features;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use features::{load_features, write_raw_f32, write_text_matrix, FeatureFormat};
pub use synth::{generate_synthetic, PlantedIntents, SynthConfig, SyntheticData};

/// One observed user-item interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: Option<i64>,
}

impl Interaction {
    pub fn new(user: usize, item: usize) -> Self {
        Self {
            user,
            item,
            timestamp: None,
        }
    }
}

/// A `(user, observed item, unobserved item)` training triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub user: usize,
    pub pos_item: usize,
    pub neg_item: usize,
}

/// Bijection between external (file) ids and dense ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    external: Vec<u64>,
}

impl IdMap {
    /// Builds a map from arbitrary external ids. Dense ids follow ascending
    /// external id order.
    pub fn from_external(ids: impl IntoIterator<Item = u64>) -> Self {
        let mut external: Vec<u64> = ids.into_iter().collect();
        external.sort_unstable();
        external.dedup();
        Self { external }
    }

    /// Identity map over `0..n`.
    pub fn identity(n: usize) -> Self {
        Self {
            external: (0..n as u64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    pub fn dense(&self, external: u64) -> Option<usize> {
        self.external.binary_search(&external).ok()
    }

    pub fn external(&self, dense: usize) -> Option<u64> {
        self.external.get(dense).copied()
    }

    /// Writes `external_id,dense_id` rows.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("external_id,dense_id\n");
        for (dense, ext) in self.external.iter().enumerate() {
            out.push_str(&format!("{ext},{dense}\n"));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("external_id")) {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                line: idx + 1,
                message: message.to_string(),
            };
            let (ext, dense) = line
                .split_once(',')
                .ok_or_else(|| parse_err("expected `external_id,dense_id`"))?;
            let ext: u64 = ext.trim().parse().map_err(|_| parse_err("bad external id"))?;
            let dense: usize = dense.trim().parse().map_err(|_| parse_err("bad dense id"))?;
            pairs.push((dense, ext));
        }
        pairs.sort_unstable();
        for (expected, (dense, _)) in pairs.iter().enumerate() {
            if *dense != expected {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("dense ids are not contiguous at {expected}"),
                });
            }
        }
        let external: Vec<u64> = pairs.into_iter().map(|(_, e)| e).collect();
        if external.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parse {
                line: 0,
                message: "external ids must ascend with dense ids".into(),
            });
        }
        Ok(Self { external })
    }
}

/// Re-indexed interactions plus the id maps used to produce them.
#[derive(Debug, Clone)]
pub struct InteractionLog {
    pub interactions: Vec<Interaction>,
    pub users: IdMap,
    pub items: IdMap,
}

impl InteractionLog {
    /// Re-indexes items against a larger id universe, e.g. every item that
    /// has features, including items nobody interacted with.
    pub fn with_items(mut self, items: IdMap) -> Result<Self> {
        for it in &mut self.interactions {
            let ext = self.items.external(it.item).expect("dense id from this map");
            it.item = items
                .dense(ext)
                .ok_or_else(|| Error::InvalidArgument(format!("item {ext} is not in the item list")))?;
        }
        self.interactions.sort();
        self.items = items;
        Ok(self)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }
}

/// Reads a `user_id,item_id[,timestamp]` CSV.
///
/// Duplicated `(user, item)` pairs collapse to one interaction keeping the
/// earliest timestamp present. The output is sorted by `(user, item)`.
pub fn load_interactions(path: &Path) -> Result<InteractionLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text)
}

pub fn parse_interactions(text: &str) -> Result<InteractionLog> {
    let mut raw: Vec<(u64, u64, Option<i64>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2 or 3 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<u64> {
            s.parse::<u64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{what} `{s}` is not a non-negative integer"),
            })
        };
        let user = num(fields[0], "user id")?;
        let item = num(fields[1], "item id")?;
        let ts = match fields.get(2) {
            Some(s) => Some(num(s, "timestamp")? as i64),
            None => None,
        };
        raw.push((user, item, ts));
    }
    if raw.is_empty() {
        return Err(Error::Empty("interaction file has no records".into()));
    }

    let users = IdMap::from_external(raw.iter().map(|r| r.0));
    let items = IdMap::from_external(raw.iter().map(|r| r.1));
    let mut merged: BTreeMap<(usize, usize), Option<i64>> = BTreeMap::new();
    for (u, i, ts) in raw {
        let key = (users.dense(u).unwrap(), items.dense(i).unwrap());
        let slot = merged.entry(key).or_insert(ts);
        *slot = match (*slot, ts) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }
    let interactions = merged
        .into_iter()
        .map(|((user, item), timestamp)| Interaction {
            user,
            item,
            timestamp,
        })
        .collect();
    Ok(InteractionLog {
        interactions,
        users,
        items,
    })
}

/// Writes interactions as `user_id,item_id[,timestamp]` using the external ids.
pub fn save_interactions(log: &InteractionLog, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for it in &log.interactions {
        let u = log.users.external(it.user).unwrap_or(it.user as u64);
        let i = log.items.external(it.item).unwrap_or(it.item as u64);
        match it.timestamp {
            Some(t) => writeln!(out, "{u},{i},{t}"),
            None => writeln!(out, "{u},{i}"),
        }
        .expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Which held-out part of a [`Dataset`] to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Users, items, disjoint interaction splits and per-modality item features.
///
/// Immutable after construction apart from attaching feature matrices.
#[derive(Debug, Clone)]
pub struct Dataset {
    n_users: usize,
    n_items: usize,
    train: Vec<Interaction>,
    validation: Vec<Interaction>,
    test: Vec<Interaction>,
    by_user: [Vec<Vec<usize>>; 3],
    features: BTreeMap<String, Array2<f64>>,
}

impl Dataset {
    /// Validates and indexes pre-split interactions.
    pub fn from_splits(
        n_users: usize,
        n_items: usize,
        mut train: Vec<Interaction>,
        mut validation: Vec<Interaction>,
        mut test: Vec<Interaction>,
    ) -> Result<Self> {
        let mut by_user: [Vec<Vec<usize>>; 3] = Default::default();
        for (slot, split) in [&mut train, &mut validation, &mut test].into_iter().enumerate() {
            split.sort();
            let mut lists = vec![Vec::new(); n_users];
            for it in split.iter() {
                if it.user >= n_users || it.item >= n_items {
                    return Err(Error::InvalidArgument(format!(
                        "interaction ({}, {}) out of range for {n_users} users x {n_items} items",
                        it.user, it.item
                    )));
                }
                lists[it.user].push(it.item);
            }
            for list in &mut lists {
                let before = list.len();
                list.dedup();
                if list.len() != before {
                    return Err(Error::InvalidArgument("duplicate interaction within a split".into()));
                }
            }
            by_user[slot] = lists;
        }
        for (u, tr) in by_user[0].iter().enumerate() {
            let [va, te] = [&by_user[1][u], &by_user[2][u]];
            let overlaps = |a: &Vec<usize>, b: &Vec<usize>| a.iter().any(|i| b.binary_search(i).is_ok());
            if overlaps(tr, va) || overlaps(tr, te) || overlaps(va, te) {
                return Err(Error::InvalidArgument(format!("splits overlap for user {u}")));
            }
            if tr.is_empty() && (!va.is_empty() || !te.is_empty()) {
                return Err(Error::InvalidArgument(format!(
                    "user {u} has held-out interactions but none in train"
                )));
            }
        }
        Ok(Self {
            n_users,
            n_items,
            train,
            validation,
            test,
            by_user,
            features: BTreeMap::new(),
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn train(&self) -> &[Interaction] {
        &self.train
    }

    pub fn validation(&self) -> &[Interaction] {
        &self.validation
    }

    pub fn test(&self) -> &[Interaction] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Interaction] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Sorted item ids user `user` has in `split`.
    pub fn user_items(&self, split: Split, user: usize) -> &[usize] {
        let slot = match split {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        };
        &self.by_user[slot][user]
    }

    /// Attaches an `M x D` feature matrix for `modality`.
    pub fn add_features(&mut self, modality: &str, matrix: Array2<f64>) -> Result<()> {
        if matrix.nrows() != self.n_items {
            return Err(Error::Shape(format!(
                "features `{modality}` have {} rows, dataset has {} items",
                matrix.nrows(),
                self.n_items
            )));
        }
        if let Some((row, _)) = matrix
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::NonFinite {
                what: format!("features `{modality}`"),
                row,
            });
        }
        self.features.insert(modality.to_string(), matrix);
        Ok(())
    }

    pub fn features(&self) -> &BTreeMap<String, Array2<f64>> {
        &self.features
    }

    pub fn modality(&self, name: &str) -> Result<&Array2<f64>> {
        self.features
            .get(name)
            .ok_or_else(|| Error::MissingModality(name.to_string()))
    }
}

fn check_ratios(ratios: (f64, f64, f64)) -> Result<()> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    Ok(())
}

/// Per-user seeded random split.
///
/// Each user's interactions are shuffled and cut by `ratios`; rounding
/// remainders go to train, but every split with a positive ratio gets at
/// least one interaction. Users with fewer than three interactions keep
/// everything in train.
pub fn split_dataset(
    interactions: &[Interaction],
    n_users: usize,
    n_items: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Dataset> {
    check_ratios(ratios)?;
    let mut per_user: Vec<Vec<Interaction>> = vec![Vec::new(); n_users];
    for it in interactions {
        if it.user >= n_users {
            return Err(Error::InvalidArgument(format!("user {} out of range", it.user)));
        }
        per_user[it.user].push(*it);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut list in per_user {
        list.sort();
        if list.len() < 3 {
            train.extend(list);
            continue;
        }
        list.shuffle(&mut rng);
        let n = list.len() as f64;
        // users with at least 3 interactions keep one for every non-empty split
        let held = |r: f64| if r > 0.0 { ((n * r + 1e-9).floor() as usize).max(1) } else { 0 };
        let n_val = held(ratios.1);
        let n_test = held(ratios.2);
        let n_train = list.len() - n_val - n_test;
        test.extend_from_slice(&list[n_train + n_val..]);
        validation.extend_from_slice(&list[n_train..n_train + n_val]);
        list.truncate(n_train);
        train.extend(list);
    }
    Dataset::from_splits(n_users, n_items, train, validation, test)
}

/// One triplet per train interaction with a uniformly drawn negative.
///
/// Negatives come from rejection sampling over all items. Users who
/// interacted with every item produce no triplets.
pub fn sample_triplets(dataset: &Dataset, epoch_seed: u64) -> Vec<Triplet> {
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let m = dataset.n_items();
    let mut out = Vec::with_capacity(dataset.train().len());
    let mut warned: HashMap<usize, ()> = HashMap::new();
    for it in dataset.train() {
        let seen = dataset.user_items(Split::Train, it.user);
        if seen.len() >= m {
            if warned.insert(it.user, ()).is_none() {
                log::warn!("user {} interacted with all {m} items; no negatives available", it.user);
            }
            continue;
        }
        let neg = loop {
            let candidate = rng.random_range(0..m);
            if seen.binary_search(&candidate).is_err() {
                break candidate;
            }
        };
        out.push(Triplet {
            user: it.user,
            pos_item: it.item,
            neg_item: neg,
        });
    }
    out
}
