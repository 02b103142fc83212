use ndarray::Array2;

use super::forward::{fuse_and_score, ModelVars};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ingest::Triplet;

/// Weights of the composite objective. `assignment` and `independence`
/// scale the auxiliary losses, `l2` the squared parameter norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub assignment: f64,
    pub independence: f64,
    pub l2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            assignment: 0.01,
            independence: 0.01,
            l2: 1e-4,
        }
    }
}

/// Entropy of assignment rows, averaged over rows and divided by the
/// number of supernodes, summed over the given matrices.
pub fn loss_assignment(t: &mut Tape, assignments: &[Var]) -> Var {
    let mut total = t.scalar(0.0);
    for &gamma in assignments {
        let (rows, k) = t.value(gamma).dim();
        let lg = t.log(gamma);
        let plogp = t.hadamard(gamma, lg);
        let s = t.sum(plogp);
        let level = t.scale(s, -1.0 / (k * rows) as f64);
        total = t.add(total, level);
    }
    total
}

/// `||X X^T - I||_F / K` per supernode matrix, summed.
pub fn loss_independence(t: &mut Tape, supernodes: &[Var]) -> Var {
    let mut total = t.scalar(0.0);
    for &x in supernodes {
        let k = t.value(x).nrows();
        let xt = t.transpose(x);
        let gram = t.matmul(x, xt);
        let eye = t.constant(Array2::eye(k));
        let diff = t.sub(gram, eye);
        let sq = t.frobenius_sq(diff);
        let norm = t.sqrt(sq);
        let level = t.scale(norm, 1.0 / k as f64);
        total = t.add(total, level);
    }
    total
}

/// Mean of `-ln σ(pos - neg)` over a batch.
pub fn loss_bpr(t: &mut Tape, pos: Var, neg: Var) -> Var {
    let margin = t.sub(pos, neg);
    let sig = t.sigmoid(margin);
    let lg = t.log(sig);
    let m = t.mean(lg);
    t.scale(m, -1.0)
}

/// Handles to the composite objective and its unweighted parts.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub assignment: Var,
    pub independence: Var,
    pub bpr: Var,
    pub norm: Var,
}

/// `λ1·L1 + λ2·L2 + L3 + λ3·||θ||²` over a triplet batch.
///
/// Per-modality auxiliary losses are summed, or averaged when
/// `sum_modalities` is false.
pub fn total_loss(
    t: &mut Tape,
    vars: &ModelVars,
    batch: &[Triplet],
    weights: LossWeights,
    sum_modalities: bool,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty triplet batch".into()));
    }
    let mut l1_parts = Vec::new();
    let mut l2_parts = Vec::new();
    for m in &vars.modalities {
        let gammas: Vec<Var> = match (vars.towers.get(m), vars.cached.get(m)) {
            (Some(tower), _) => tower.assignments.clone(),
            (None, Some(cached)) => cached.assignments.iter().map(|g| t.constant(g.clone())).collect(),
            (None, None) => return Err(Error::MissingModality(m.clone())),
        };
        let prefix = format!("tower.{m}.");
        let supernodes: Vec<Var> = vars
            .blocks
            .iter()
            .filter(|(name, _)| name.starts_with(&prefix))
            .map(|&(_, v)| v)
            .collect();
        l1_parts.push(loss_assignment(t, &gammas));
        l2_parts.push(loss_independence(t, &supernodes));
    }
    let combine = |t: &mut Tape, parts: &[Var]| {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = t.add(acc, p);
        }
        if sum_modalities {
            acc
        } else {
            t.scale(acc, 1.0 / parts.len() as f64)
        }
    };
    let assignment = combine(t, &l1_parts);
    let independence = combine(t, &l2_parts);

    let users: Vec<usize> = batch.iter().map(|x| x.user).collect();
    let pos: Vec<usize> = batch.iter().map(|x| x.pos_item).collect();
    let neg: Vec<usize> = batch.iter().map(|x| x.neg_item).collect();
    let s_pos = fuse_and_score(t, vars, &users, &pos);
    let s_neg = fuse_and_score(t, vars, &users, &neg);
    let bpr = loss_bpr(t, s_pos, s_neg);

    let mut norm = t.scalar(0.0);
    for &(_, v) in &vars.blocks {
        let sq = t.frobenius_sq(v);
        norm = t.add(norm, sq);
    }

    let mut total = bpr;
    for (w, term) in [
        (weights.assignment, assignment),
        (weights.independence, independence),
        (weights.l2, norm),
    ] {
        if w != 0.0 {
            let scaled = t.scale(term, w);
            total = t.add(total, scaled);
        }
    }
    Ok(LossTerms {
        total,
        assignment,
        independence,
        bpr,
        norm,
    })
}
