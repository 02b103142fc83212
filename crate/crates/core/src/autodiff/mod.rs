//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node to a [`Tape`] and returns a [`Var`] handle.
//! Nodes are stored in creation order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep. A tape is
//! consumed by one backward pass; build a fresh tape for each step.
//!
//! Scalars are `1 x 1` matrices. Shape mismatches in the primitives are
//! programming errors and panic, like ndarray's own arithmetic.

mod check;

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::cograph::SparseMatrix;
use crate::error::{Error, Result};

pub use check::{finite_difference, grad_check, relative_error};

/// Clamp floor for `log`, `rsqrt` and `sqrt`.
pub const EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpmmConst(Arc<SparseMatrix>, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Hadamard(Var, Var),
    RowSoftmax(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Sigmoid(Var),
    FrobeniusSq(Var),
    Rsqrt(Var),
    Sqrt(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar_value on non-scalar node");
        m[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `sparse * x` with the sparse factor held constant.
    pub fn spmm_const(&mut self, sparse: Arc<SparseMatrix>, x: Var) -> Var {
        let value = sparse.spmm(self.value(x)).expect("spmm_const shape mismatch");
        let rg = self.rg(x);
        self.push(value, Op::SpmmConst(sparse, x), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add shape mismatch");
        let value = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "sub shape mismatch");
        let value = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Sub(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "hadamard shape mismatch");
        let value = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Hadamard(a, b), rg)
    }

    /// Softmax over each row, with the row maximum subtracted first.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let value = row_softmax(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::RowSoftmax(a), rg)
    }

    /// `ln(max(x, EPS))` elementwise; the gradient is zero below the clamp.
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(EPS).ln());
        let rg = self.rg(a);
        self.push(value, Op::Log(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        assert!(!m.is_empty(), "mean of empty matrix");
        let value = Array2::from_elem((1, 1), m.sum() / m.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), rows);
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, rows.to_vec()), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).iter().map(|x| x * x).sum());
        let rg = self.rg(a);
        self.push(value, Op::FrobeniusSq(a), rg)
    }

    /// `max(x, EPS)^{-1/2}` elementwise; the gradient is zero below the clamp.
    pub fn rsqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / x.max(EPS).sqrt());
        let rg = self.rg(a);
        self.push(value, Op::Rsqrt(a), rg)
    }

    /// `sqrt(max(x, 0))`; the gradient is zero below `EPS`.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0).sqrt());
        let rg = self.rg(a);
        self.push(value, Op::Sqrt(a), rg)
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Autodiff("tape already consumed by a backward pass".into()));
        }
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).dim()
            )));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        if self.rg(loss) {
            grads[loss.0] = Some(Array2::ones((1, 1)));
        }
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // Leaves that never received a gradient get zeros.
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(Array2::zeros(node.value.dim()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::SpmmConst(sparse, x) => acc(*x, sparse_t_dense(sparse, g)),
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::Hadamard(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let gy = g * y;
                let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, &gy - &(y * &dots));
            }
            Op::Log(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    *d = if x >= EPS { *d / x } else { 0.0 };
                });
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Array2::from_elem(self.value(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let dim = self.value(*a).dim();
                acc(*a, Array2::from_elem(dim, g[[0, 0]] / (dim.0 * dim.1) as f64));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    acc(*p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, g * &y.mapv(|s| s * (1.0 - s)));
            }
            Op::FrobeniusSq(a) => acc(*a, self.value(*a) * (2.0 * g[[0, 0]])),
            Op::Rsqrt(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    *d = if x >= EPS { -0.5 * *d * x.powf(-1.5) } else { 0.0 };
                });
                acc(*a, d);
            }
            Op::Sqrt(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                    *d = if x >= EPS { 0.5 * *d / x.sqrt() } else { 0.0 };
                });
                acc(*a, d);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn row_softmax(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row /= total;
    }
    out
}

/// `S^T * g` accumulated in ascending row order of `S`.
fn sparse_t_dense(sparse: &SparseMatrix, g: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = sparse.shape();
    let mut out = Array2::zeros((cols, g.ncols()));
    for r in 0..rows {
        for (c, v) in sparse.row(r) {
            out.row_mut(c).scaled_add(v, &g.row(r));
        }
    }
    out
}
