//! Full-ranking top-K evaluation.
//!
//! For each user with held-out items, every item the model has not seen the
//! user interact with is a candidate. Candidates are sorted by descending
//! score with ties broken by ascending item id.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{Dataset, Split};
use crate::intents::ScoringSnapshot;

/// Fraction of the top `k` that is relevant. `truth` must be sorted.
pub fn precision_at_k(topk: &[usize], truth: &[usize], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    hits(topk, truth, k) as f64 / k as f64
}

/// Fraction of the relevant items found in the top `k`. `truth` must be sorted.
pub fn recall_at_k(topk: &[usize], truth: &[usize], k: usize) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    hits(topk, truth, k) as f64 / truth.len() as f64
}

/// Binary-relevance NDCG with discount `1 / log2(rank + 1)`, ranks from 1.
pub fn ndcg_at_k(topk: &[usize], truth: &[usize], k: usize) -> f64 {
    let dcg: f64 = topk
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| truth.binary_search(item).is_ok())
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..truth.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    if ideal == 0.0 {
        0.0
    } else {
        dcg / ideal
    }
}

fn hits(topk: &[usize], truth: &[usize], k: usize) -> usize {
    topk.iter().take(k).filter(|i| truth.binary_search(i).is_ok()).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRanking {
    pub user: usize,
    /// Top `max(ks)` items, best first.
    pub top: Vec<usize>,
    pub truth: Vec<usize>,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub ks: Vec<usize>,
    pub users: Vec<UserRanking>,
    pub precision: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub n_evaluated: usize,
    pub n_skipped: usize,
}

impl RankingReport {
    /// `metric,K,value,n_users`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,K,value,n_users\n");
        for (name, table) in [("precision", &self.precision), ("recall", &self.recall), ("ndcg", &self.ndcg)] {
            for (k, v) in table {
                writeln!(out, "{name},{k},{v},{}", self.n_evaluated).unwrap();
            }
        }
        out
    }

    /// `user,K,precision,recall,ndcg,top_items` with space-separated items.
    pub fn per_user_csv(&self) -> String {
        let mut out = String::from("user,K,precision,recall,ndcg,top_items\n");
        for u in &self.users {
            for &k in &self.ks {
                let items: Vec<String> = u.top.iter().take(k).map(usize::to_string).collect();
                writeln!(
                    out,
                    "{},{k},{},{},{},{}",
                    u.user,
                    precision_at_k(&u.top, &u.truth, k),
                    recall_at_k(&u.top, &u.truth, k),
                    ndcg_at_k(&u.top, &u.truth, k),
                    items.join(" ")
                )
                .unwrap();
            }
        }
        out
    }
}

/// Items excluded from `user`'s candidates when evaluating `split`.
fn excluded(dataset: &Dataset, split: Split, user: usize) -> Vec<usize> {
    let mut out = dataset.user_items(Split::Train, user).to_vec();
    if split == Split::Test {
        out.extend_from_slice(dataset.user_items(Split::Validation, user));
        out.sort_unstable();
    }
    out
}

/// Scores, ranks and evaluates every user with non-empty ground truth.
pub fn rank_users(snapshot: &ScoringSnapshot, dataset: &Dataset, split: Split, ks: &[usize]) -> Result<RankingReport> {
    if split == Split::Train {
        return Err(Error::InvalidArgument("evaluation split must be validation or test".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("K values must be positive".into()));
    }
    if snapshot.n_users() != dataset.n_users() || snapshot.n_items() != dataset.n_items() {
        return Err(Error::Shape("snapshot does not match dataset dimensions".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let max_k = *ks.last().unwrap();
    let m = dataset.n_items();

    let targets: Vec<usize> = (0..dataset.n_users())
        .filter(|&u| !dataset.user_items(split, u).is_empty())
        .collect();
    let users: Vec<UserRanking> = targets
        .par_iter()
        .map(|&user| {
            let skip = excluded(dataset, split, user);
            let mut scored: Vec<(f64, usize)> = (0..m)
                .filter(|i| skip.binary_search(i).is_err())
                .map(|i| (snapshot.score(user, i), i))
                .collect();
            if scored.len() < max_k {
                return Err(Error::TooFewCandidates {
                    user,
                    k: max_k,
                    candidates: scored.len(),
                });
            }
            let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            if scored.len() > max_k {
                scored.select_nth_unstable_by(max_k - 1, order);
                scored.truncate(max_k);
            }
            let candidates = m - skip.len();
            scored.sort_by(order);
            Ok(UserRanking {
                user,
                top: scored.into_iter().map(|(_, i)| i).collect(),
                truth: dataset.user_items(split, user).to_vec(),
                candidates,
            })
        })
        .collect::<Result<_>>()?;

    let n = users.len();
    let mean = |f: fn(&[usize], &[usize], usize) -> f64, k: usize| {
        if n == 0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for u in &users {
            acc += f(&u.top, &u.truth, k);
        }
        acc / n as f64
    };
    let table = |f: fn(&[usize], &[usize], usize) -> f64| ks.iter().map(|&k| (k, mean(f, k))).collect();
    Ok(RankingReport {
        precision: table(precision_at_k),
        recall: table(recall_at_k),
        ndcg: table(ndcg_at_k),
        n_evaluated: n,
        n_skipped: dataset.n_users() - n,
        ks,
        users,
    })
}

/// Expected recall@k of a uniformly random ranking: each relevant item lands
/// in the top `k` of `C` candidates with probability `min(k, C) / C`.
pub fn random_baseline_recall(dataset: &Dataset, split: Split, k: usize) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for u in 0..dataset.n_users() {
        if dataset.user_items(split, u).is_empty() {
            continue;
        }
        let c = dataset.n_items() - excluded(dataset, split, u).len();
        if c > 0 {
            acc += k.min(c) as f64 / c as f64;
        }
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let choose2 = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut cols: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
