use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array2, Axis};

use super::ModelParams;
use crate::autodiff::{Tape, Var};
use crate::cograph::{CoGraph, SparseMatrix};
use crate::error::{Error, Result};

/// Fixed inputs of a forward pass: the level-0 graph and, per modality, the
/// aggregated base features `Z^(0)`. Features never change during training,
/// so `Z^(0)` is computed once.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    adjacency: Arc<SparseMatrix>,
    base: BTreeMap<String, Array2<f64>>,
}

impl ModelInputs {
    /// `modalities` empty means every feature matrix given.
    pub fn new(graph: &CoGraph, features: &BTreeMap<String, Array2<f64>>, modalities: &[String]) -> Result<Self> {
        let names: Vec<String> = if modalities.is_empty() {
            features.keys().cloned().collect()
        } else {
            modalities.to_vec()
        };
        if names.is_empty() {
            return Err(Error::InvalidArgument("no modalities selected".into()));
        }
        let isolated = graph.isolated();
        let mut base = BTreeMap::new();
        for name in names {
            let x = features.get(&name).ok_or_else(|| Error::MissingModality(name.clone()))?;
            base.insert(name, aggregate_base(graph.norm_adj(), &isolated, x)?);
        }
        Ok(Self {
            adjacency: Arc::new(graph.adjacency().clone()),
            base,
        })
    }

    pub fn modalities(&self) -> impl Iterator<Item = &str> {
        self.base.keys().map(String::as_str)
    }

    pub fn n_items(&self) -> usize {
        self.adjacency.shape().0
    }

    pub fn base(&self, modality: &str) -> Option<&Array2<f64>> {
        self.base.get(modality)
    }

    pub fn feature_dims(&self) -> BTreeMap<String, usize> {
        self.base.iter().map(|(k, v)| (k.clone(), v.ncols())).collect()
    }
}

/// Level-0 aggregation `Â X`, where rows of isolated items fall back to
/// their own features.
pub fn aggregate_base(norm_adj: &SparseMatrix, isolated: &[bool], features: &Array2<f64>) -> Result<Array2<f64>> {
    if isolated.len() != features.nrows() {
        return Err(Error::Shape(format!(
            "{} graph nodes vs {} feature rows",
            isolated.len(),
            features.nrows()
        )));
    }
    let mut z = norm_adj.spmm(features)?;
    for (i, _) in isolated.iter().enumerate().filter(|(_, &iso)| iso) {
        z.row_mut(i).assign(&features.row(i));
    }
    Ok(z)
}

/// Intra-level aggregation on a weighted dense graph. Degrees are row sums
/// clamped through `rsqrt`; zero-degree rows fall back to their own input.
fn aggregate_dense(t: &mut Tape, adj: Var, x: Var) -> Var {
    let k = t.value(adj).nrows();
    let ones = t.constant(Array2::ones((k, 1)));
    let deg = t.matmul(adj, ones);
    let isolated: Vec<usize> = t
        .value(deg)
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= 0.0)
        .map(|(i, _)| i)
        .collect();
    let inv = t.rsqrt(deg);
    let inv_t = t.transpose(inv);
    let outer = t.matmul(inv, inv_t);
    let norm = t.hadamard(adj, outer);
    let z = t.matmul(norm, x);
    if isolated.is_empty() {
        return z;
    }
    let mut mask = Array2::zeros(t.value(x).dim());
    for i in isolated {
        mask.row_mut(i).fill(1.0);
    }
    let mask = t.constant(mask);
    let keep = t.hadamard(mask, x);
    t.add(z, keep)
}

/// Affinities `E = Z X^T` and assignments `Γ = softmax_rows(E)`.
fn assign_vars(t: &mut Tape, z: Var, supernodes: Var) -> (Var, Var) {
    let xt = t.transpose(supernodes);
    let e = t.matmul(z, xt);
    let gamma = t.row_softmax(e);
    (e, gamma)
}

enum Adjacency {
    Sparse(Arc<SparseMatrix>),
    Dense(Var),
}

/// `Γ^T A Γ`.
fn coarsen_vars(t: &mut Tape, gamma: Var, adj: &Adjacency) -> Var {
    let a_gamma = match adj {
        Adjacency::Sparse(s) => t.spmm_const(Arc::clone(s), gamma),
        Adjacency::Dense(a) => t.matmul(*a, gamma),
    };
    let gt = t.transpose(gamma);
    t.matmul(gt, a_gamma)
}

/// Tape handles of one modality's tower.
#[derive(Debug, Clone)]
pub struct TowerVars {
    pub supernodes: Vec<Var>,
    pub affinities: Vec<Var>,
    pub assignments: Vec<Var>,
    pub coarsened: Vec<Var>,
    pub chains: Vec<Var>,
    pub item_repr: Var,
}

fn forward_tower(t: &mut Tape, base: &Array2<f64>, adjacency: &Arc<SparseMatrix>, supernodes: Vec<Var>) -> TowerVars {
    let depth = supernodes.len();
    let mut z = t.constant(base.clone());
    let mut adj = Adjacency::Sparse(Arc::clone(adjacency));
    let mut affinities = Vec::with_capacity(depth);
    let mut assignments = Vec::with_capacity(depth);
    let mut coarsened = Vec::with_capacity(depth);
    let mut chains: Vec<Var> = Vec::with_capacity(depth);
    for (l, &x) in supernodes.iter().enumerate() {
        let (e, gamma) = assign_vars(t, z, x);
        let a_next = coarsen_vars(t, gamma, &adj);
        let chain = match chains.last() {
            None => gamma,
            Some(&prev) => t.matmul(prev, gamma),
        };
        if l + 1 < depth {
            z = aggregate_dense(t, a_next, x);
        }
        adj = Adjacency::Dense(a_next);
        affinities.push(e);
        assignments.push(gamma);
        coarsened.push(a_next);
        chains.push(chain);
    }
    let item_repr = t.concat_cols(&chains);
    TowerVars {
        supernodes,
        affinities,
        assignments,
        coarsened,
        chains,
        item_repr,
    }
}

/// Values of one tower's forward pass, detached from any tape.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerValues {
    pub assignments: Vec<Array2<f64>>,
    pub coarsened: Vec<Array2<f64>>,
    pub chains: Vec<Array2<f64>>,
    pub item_repr: Array2<f64>,
}

impl TowerValues {
    fn from_vars(t: &Tape, v: &TowerVars) -> Self {
        let grab = |vars: &[Var]| vars.iter().map(|&x| t.value(x).clone()).collect();
        Self {
            assignments: grab(&v.assignments),
            coarsened: grab(&v.coarsened),
            chains: grab(&v.chains),
            item_repr: t.value(v.item_repr).clone(),
        }
    }
}

/// Every tape handle of one full forward pass.
#[derive(Debug, Clone)]
pub struct ModelVars {
    /// Parameter leaves, named as in [`ModelParams::blocks`].
    pub blocks: Vec<(String, Var)>,
    pub towers: BTreeMap<String, TowerVars>,
    /// Cached tower outputs used instead of `towers` (detached reuse).
    pub cached: BTreeMap<String, TowerValues>,
    /// `[id_user | Σ_m user_intent_m]`, `N x (D_id + ΣK)`.
    pub user_full: Var,
    /// `[id_item | Σ_m V_m]`, `M x (D_id + ΣK)`.
    pub item_full: Var,
    pub modalities: Vec<String>,
}

fn leaf(t: &mut Tape, value: &Array2<f64>, trainable: bool) -> Var {
    if trainable {
        t.param(value.clone())
    } else {
        t.constant(value.clone())
    }
}

fn sum_vars(t: &mut Tape, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = t.add(acc, v);
    }
    acc
}

impl ModelVars {
    /// Records the full model on `tape`. With `trainable` false every
    /// parameter enters as a constant.
    pub fn build(t: &mut Tape, params: &ModelParams, inputs: &ModelInputs, trainable: bool) -> Result<Self> {
        Self::build_inner(t, params, inputs, trainable, None)
    }

    /// Like [`ModelVars::build`] but item representations come from
    /// `cache` as constants; supernodes still enter as parameters.
    pub fn build_cached(
        t: &mut Tape,
        params: &ModelParams,
        inputs: &ModelInputs,
        cache: &BTreeMap<String, TowerValues>,
    ) -> Result<Self> {
        Self::build_inner(t, params, inputs, true, Some(cache))
    }

    fn build_inner(
        t: &mut Tape,
        params: &ModelParams,
        inputs: &ModelInputs,
        trainable: bool,
        cache: Option<&BTreeMap<String, TowerValues>>,
    ) -> Result<Self> {
        if params.n_items() != inputs.n_items() {
            return Err(Error::Shape(format!(
                "parameters cover {} items, graph has {}",
                params.n_items(),
                inputs.n_items()
            )));
        }
        let modalities: Vec<String> = inputs.modalities().map(str::to_string).collect();
        let mut blocks = Vec::new();
        let mut towers = BTreeMap::new();
        let mut cached = BTreeMap::new();
        let mut item_parts = Vec::new();
        for m in &modalities {
            let tower = params.towers.get(m).ok_or_else(|| Error::MissingModality(m.clone()))?;
            let base = inputs.base(m).expect("modality listed by inputs");
            for (l, x) in tower.supernodes.iter().enumerate() {
                if x.ncols() != base.ncols() {
                    return Err(Error::Shape(format!(
                        "modality `{m}` supernodes have {} columns, features have {}",
                        x.ncols(),
                        base.ncols()
                    )));
                }
                if x.nrows() != params.levels.counts()[l] {
                    return Err(Error::Shape(format!("modality `{m}` level {} supernode count", l + 1)));
                }
            }
            let sn: Vec<Var> = tower.supernodes.iter().map(|x| leaf(t, x, trainable)).collect();
            for (l, &v) in sn.iter().enumerate() {
                blocks.push((format!("tower.{m}.level{}", l + 1), v));
            }
            match cache.and_then(|c| c.get(m)) {
                Some(values) => {
                    item_parts.push(t.constant(values.item_repr.clone()));
                    cached.insert(m.clone(), values.clone());
                }
                None => {
                    let tv = forward_tower(t, base, &inputs.adjacency, sn);
                    item_parts.push(tv.item_repr);
                    towers.insert(m.clone(), tv);
                }
            }
        }
        let mut user_parts = Vec::new();
        for m in &modalities {
            let u = params.user_intent.get(m).ok_or_else(|| Error::MissingModality(m.clone()))?;
            let v = leaf(t, u, trainable);
            blocks.push((format!("user_intent.{m}"), v));
            user_parts.push(v);
        }
        let id_user = leaf(t, &params.id_user, trainable);
        let id_item = leaf(t, &params.id_item, trainable);
        blocks.push(("id_user".into(), id_user));
        blocks.push(("id_item".into(), id_item));

        let u_star = sum_vars(t, &user_parts);
        let v_star = sum_vars(t, &item_parts);
        if t.value(u_star).ncols() != t.value(v_star).ncols() {
            return Err(Error::Shape("user intent width differs from item representation width".into()));
        }
        let user_full = t.concat_cols(&[id_user, u_star]);
        let item_full = t.concat_cols(&[id_item, v_star]);
        Ok(Self {
            blocks,
            towers,
            cached,
            user_full,
            item_full,
            modalities,
        })
    }

    pub fn tower_values(&self, t: &Tape) -> BTreeMap<String, TowerValues> {
        self.towers
            .iter()
            .map(|(m, v)| (m.clone(), TowerValues::from_vars(t, v)))
            .collect()
    }
}

/// Scores `ū_u · v̄_i` for each `(users[k], items[k])`, as a `B x 1` node.
pub fn fuse_and_score(t: &mut Tape, vars: &ModelVars, users: &[usize], items: &[usize]) -> Var {
    assert_eq!(users.len(), items.len(), "user and item batches differ in length");
    let u = t.gather_rows(vars.user_full, users);
    let v = t.gather_rows(vars.item_full, items);
    let prod = t.hadamard(u, v);
    let width = t.value(prod).ncols();
    let ones = t.constant(Array2::ones((width, 1)));
    t.matmul(prod, ones)
}

/// `concat_cols` of the chained assignment matrices.
pub fn item_repr(chains: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = chains.iter().map(|c| c.view()).collect();
    ndarray::concatenate(Axis(1), &views).expect("chains share the item dimension")
}

/// Value-level `D^{-1/2} A D^{-1/2}` with row-sum degrees.
pub fn normalize_dense(adj: &Array2<f64>) -> Array2<f64> {
    let mut t = Tape::new();
    let a = t.constant(adj.clone());
    let k = adj.nrows();
    let ones = t.constant(Array2::ones((k, 1)));
    let deg = t.matmul(a, ones);
    let inv = t.rsqrt(deg);
    let inv_t = t.transpose(inv);
    let outer = t.matmul(inv, inv_t);
    let norm = t.hadamard(a, outer);
    let mut out = t.value(norm).clone();
    for (i, d) in t.value(deg).iter().enumerate() {
        if *d <= 0.0 {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

/// Value-level assignment step: `(E, Γ)`.
pub fn assign(z: &Array2<f64>, supernodes: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if z.ncols() != supernodes.ncols() {
        return Err(Error::Shape(format!(
            "node width {} vs supernode width {}",
            z.ncols(),
            supernodes.ncols()
        )));
    }
    let mut t = Tape::new();
    let zv = t.constant(z.clone());
    let xv = t.constant(supernodes.clone());
    let (e, g) = assign_vars(&mut t, zv, xv);
    Ok((t.value(e).clone(), t.value(g).clone()))
}

/// Value-level coarsening `Γ^T A Γ`.
pub fn coarsen_dense(gamma: &Array2<f64>, adj: &Array2<f64>) -> Result<Array2<f64>> {
    if adj.nrows() != adj.ncols() || adj.ncols() != gamma.nrows() {
        return Err(Error::Shape(format!(
            "adjacency {:?} vs assignment {:?}",
            adj.dim(),
            gamma.dim()
        )));
    }
    Ok(gamma.t().dot(&adj.dot(gamma)))
}

/// Detached scoring tables for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringSnapshot {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl ScoringSnapshot {
    pub fn new(users: Array2<f64>, items: Array2<f64>) -> Result<Self> {
        if users.ncols() != items.ncols() {
            return Err(Error::Shape("user and item vectors differ in width".into()));
        }
        Ok(Self { users, items })
    }

    pub fn from_params(params: &ModelParams, inputs: &ModelInputs) -> Result<Self> {
        let mut t = Tape::new();
        let vars = ModelVars::build(&mut t, params, inputs, false)?;
        Self::new(t.value(vars.user_full).clone(), t.value(vars.item_full).clone())
    }

    pub fn n_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.items.nrows()
    }

    /// Dot product accumulated left to right.
    pub fn score(&self, user: usize, item: usize) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.users.row(user).iter().zip(self.items.row(item).iter()) {
            acc += a * b;
        }
        acc
    }
}

/// Tower outputs of every modality for `params`, detached.
pub fn tower_values(params: &ModelParams, inputs: &ModelInputs) -> Result<BTreeMap<String, TowerValues>> {
    let mut t = Tape::new();
    let vars = ModelVars::build(&mut t, params, inputs, false)?;
    Ok(vars.tower_values(&t))
}

/// Value-level intra-level aggregation on a weighted dense graph.
pub fn aggregate_level(adj: &Array2<f64>, x: &Array2<f64>) -> Result<Array2<f64>> {
    if adj.nrows() != adj.ncols() || adj.ncols() != x.nrows() {
        return Err(Error::Shape(format!("adjacency {:?} vs nodes {:?}", adj.dim(), x.dim())));
    }
    let mut t = Tape::new();
    let a = t.constant(adj.clone());
    let xv = t.constant(x.clone());
    let z = aggregate_dense(&mut t, a, xv);
    Ok(t.value(z).clone())
}
