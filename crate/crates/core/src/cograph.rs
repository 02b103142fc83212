//! Co-interacted item graph.
//!
//! Two items are adjacent when at least `min_cousers` distinct users
//! interacted with both in the training split. Edges are binary; the raw
//! co-user counts are kept alongside for export and threshold sweeps.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::Interaction;

/// Compressed sparse row matrix. Column indices are strictly ascending
/// within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triples; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| *r >= n_rows || *c >= n_cols) {
            return Err(Error::Shape(format!("entry ({r}, {c}) outside {n_rows}x{n_cols}")));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut indptr = vec![0; n_rows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            indptr[r + 1] += 1;
            indices.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of one row in ascending column order.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => self.values[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).map(|(_, v)| v).sum()).collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_rows, self.n_cols));
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.nnz());
        for r in 0..self.n_rows {
            entries.extend(self.row(r).map(|(c, v)| (c, r, v)));
        }
        Self::from_triplets(self.n_cols, self.n_rows, entries).expect("indices in range")
    }

    /// Sparse times dense. Each output entry accumulates in ascending column
    /// order, so results are bit-reproducible.
    pub fn spmm(&self, dense: &Array2<f64>) -> Result<Array2<f64>> {
        if dense.nrows() != self.n_cols {
            return Err(Error::Shape(format!(
                "spmm: sparse is {}x{}, dense has {} rows",
                self.n_rows,
                self.n_cols,
                dense.nrows()
            )));
        }
        let mut out = Array2::zeros((self.n_rows, dense.ncols()));
        for (r, mut out_row) in out.rows_mut().into_iter().enumerate() {
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &dense.row(c));
            }
        }
        Ok(out)
    }
}

/// Symmetric degree normalization `D^{-1/2} A D^{-1/2}` with degrees taken as
/// row sums. Zero-degree rows stay zero.
pub fn normalize(adj: &SparseMatrix) -> SparseMatrix {
    let inv_sqrt: Vec<f64> = adj
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut out = adj.clone();
    for r in 0..adj.n_rows {
        for k in adj.indptr[r]..adj.indptr[r + 1] {
            out.values[k] = adj.values[k] * inv_sqrt[r] * inv_sqrt[adj.indices[k]];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphOptions {
    pub min_cousers: usize,
    /// Users with more train items than this contribute a random subset.
    pub user_cap: usize,
    pub seed: u64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            min_cousers: 5,
            user_cap: 512,
            seed: 0,
        }
    }
}

/// Undirected edge with its co-user count, `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub co_users: usize,
}

#[derive(Debug, Clone)]
pub struct CoGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
    adjacency: SparseMatrix,
    norm_adj: SparseMatrix,
    degrees: Vec<usize>,
}

impl CoGraph {
    /// Builds from an explicit edge list. Self loops and out-of-range nodes
    /// are rejected; duplicate edges are an error.
    pub fn from_edges(n_nodes: usize, mut edges: Vec<Edge>) -> Result<Self> {
        for e in edges.iter_mut() {
            if e.a == e.b {
                return Err(Error::InvalidArgument(format!("self loop on item {}", e.a)));
            }
            if e.a.max(e.b) >= n_nodes {
                return Err(Error::Shape(format!("edge ({}, {}) beyond {n_nodes} items", e.a, e.b)));
            }
            if e.a > e.b {
                std::mem::swap(&mut e.a, &mut e.b);
            }
        }
        edges.sort();
        if edges.windows(2).any(|w| (w[0].a, w[0].b) == (w[1].a, w[1].b)) {
            return Err(Error::InvalidArgument("duplicate edge".into()));
        }
        let mut triples = Vec::with_capacity(edges.len() * 2);
        let mut degrees = vec![0; n_nodes];
        for e in &edges {
            triples.push((e.a, e.b, 1.0));
            triples.push((e.b, e.a, 1.0));
            degrees[e.a] += 1;
            degrees[e.b] += 1;
        }
        let adjacency = SparseMatrix::from_triplets(n_nodes, n_nodes, triples)?;
        let norm_adj = normalize(&adjacency);
        if edges.is_empty() && n_nodes > 0 {
            log::warn!("co-interaction graph over {n_nodes} items has no edges");
        }
        Ok(Self {
            n_nodes,
            edges,
            adjacency,
            norm_adj,
            degrees,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Binary symmetric adjacency.
    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    /// Cached `D^{-1/2} A D^{-1/2}`.
    pub fn norm_adj(&self) -> &SparseMatrix {
        &self.norm_adj
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn isolated(&self) -> Vec<bool> {
        self.degrees.iter().map(|&d| d == 0).collect()
    }

    /// Subgraph keeping edges with at least `min_cousers` co-users.
    pub fn with_threshold(&self, min_cousers: usize) -> Self {
        let kept = self.edges.iter().copied().filter(|e| e.co_users >= min_cousers).collect();
        Self::from_edges(self.n_nodes, kept).expect("subset of a valid graph")
    }

    /// `(degree, node count)` pairs in ascending degree.
    pub fn degree_histogram(&self) -> Vec<(usize, usize)> {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &d in &self.degrees {
            *counts.entry(d).or_default() += 1;
        }
        let mut hist: Vec<_> = counts.into_iter().collect();
        hist.sort_unstable();
        hist
    }

    /// `item_i,item_j,co_user_count` with `item_i < item_j`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item_i,item_j,co_user_count\n");
        for e in &self.edges {
            writeln!(out, "{},{},{}", e.a, e.b, e.co_users).unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, n_nodes: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut edges = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("item_i")) {
                continue;
            }
            let parsed: std::result::Result<Vec<usize>, _> = line.split(',').map(|f| f.trim().parse()).collect();
            match parsed.as_deref() {
                Ok([a, b, c]) => edges.push(Edge {
                    a: *a,
                    b: *b,
                    co_users: *c,
                }),
                _ => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: "expected `item_i,item_j,co_user_count`".into(),
                    })
                }
            }
        }
        Self::from_edges(n_nodes, edges)
    }
}

/// Counts distinct co-users per item pair over the train interactions and
/// keeps pairs at or above `opts.min_cousers`. Every item in `0..n_items` is
/// a node.
pub fn build_cograph(train: &[Interaction], n_items: usize, opts: GraphOptions) -> Result<CoGraph> {
    if opts.min_cousers == 0 {
        return Err(Error::InvalidArgument("min_cousers must be at least 1".into()));
    }
    let mut per_user: HashMap<usize, Vec<usize>> = HashMap::new();
    for it in train {
        if it.item >= n_items {
            return Err(Error::Shape(format!("item {} beyond {n_items} items", it.item)));
        }
        per_user.entry(it.user).or_default().push(it.item);
    }
    let mut users: Vec<usize> = per_user.keys().copied().collect();
    users.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for u in users {
        let items = per_user.get_mut(&u).unwrap();
        items.sort_unstable();
        items.dedup();
        if items.len() > opts.user_cap {
            items.shuffle(&mut rng);
            items.truncate(opts.user_cap);
            items.sort_unstable();
        }
        for (k, &a) in items.iter().enumerate() {
            for &b in &items[k + 1..] {
                *counts.entry((a, b)).or_default() += 1;
            }
        }
    }
    let edges: Vec<Edge> = counts
        .into_iter()
        .filter(|&(_, c)| c >= opts.min_cousers)
        .map(|((a, b), co_users)| Edge { a, b, co_users })
        .collect();
    CoGraph::from_edges(n_items, edges)
}
