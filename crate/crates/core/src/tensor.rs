//! Dense row-major `f64` tensors and a define-by-run reverse-mode tape.
//!
//! A [`Tape`] is built fresh for every forward pass. Leaves are pushed with
//! [`Tape::leaf`] (participating in differentiation when the tensor has
//! `requires_grad` set) or [`Tape::constant`]; every op appends one node whose
//! inputs were recorded before it, so the node list is always in topological
//! order. [`Tape::backward`] walks that list once in reverse.
//!
//! ```
//! use dcs_core::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]).requiring_grad());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), vec![2.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("requires_grad", &self.requires_grad)
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor, checking that `shape` describes exactly `data.len()` values.
    ///
    /// An empty shape is a scalar holding one value.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(format!("shape {shape:?} has a zero dimension")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// A rank-1 tensor. Panics on an empty vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "tensor must hold at least one value");
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::dim("ragged rows"));
        }
        Tensor::new(vec![n, m], rows.concat())
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn requiring_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Length of the last axis (1 for a scalar).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.data.len() / self.rows();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the accumulated gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => self.grad = Some(g.to_vec()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
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
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    Transpose(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax {
        x: Var,
        temperature: f64,
    },
    LogSoftmax {
        x: Var,
        temperature: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Recording of one forward computation.
///
/// The tape is single-threaded; build one per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. It is differentiated iff `t.requires_grad()`.
    pub fn leaf(&self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad;
        self.push(t.detached(), Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape.clone()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    fn with<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, shape) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
                return Err(Error::dim(format!(
                    "matmul of {:?} and {:?}",
                    ta.shape, tb.shape
                )));
            }
            let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
            (matmul_raw(&ta.data, &tb.data, m, k, n), vec![m, n])
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let t = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            if ta.shape != tb.shape {
                return Err(Error::dim(format!("add of {:?} and {:?}", ta.shape, tb.shape)));
            }
            let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
            Tensor::new(ta.shape.clone(), data)?
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// `x[m, n] + row[n]`, broadcasting `row` over the leading axis.
    pub fn add_row(&self, x: Var, row: Var) -> Result<Var> {
        let t = {
            let nodes = self.nodes.borrow();
            let (tx, tr) = (&nodes[x.0].value, &nodes[row.0].value);
            if tx.shape.len() != 2 || tr.shape != [tx.shape[1]] {
                return Err(Error::dim(format!(
                    "add_row of {:?} and {:?}",
                    tx.shape, tr.shape
                )));
            }
            let n = tx.shape[1];
            let data = tx
                .data
                .iter()
                .enumerate()
                .map(|(i, v)| v + tr.data[i % n])
                .collect();
            Tensor::new(tx.shape.clone(), data)?
        };
        let rg = self.rg(&[x, row]);
        Ok(self.push(t, Op::AddRow(x, row), rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let t = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            if ta.shape != tb.shape {
                return Err(Error::dim(format!("mul of {:?} and {:?}", ta.shape, tb.shape)));
            }
            let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
            Tensor::new(ta.shape.clone(), data)?
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let t = self.with(x, |t| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|v| v * c).collect(),
            requires_grad: false,
            grad: None,
        });
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, c), rg)
    }

    pub fn relu(&self, x: Var) -> Var {
        let t = self.with(x, |t| Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            requires_grad: false,
            grad: None,
        });
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self, x: Var) -> Var {
        let s = self.with(x, |t| t.data.iter().sum());
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self, x: Var) -> Var {
        let s = self.with(x, |t| t.data.iter().sum::<f64>() / t.data.len() as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Reduces the last axis: `[.., n] -> [..]`.
    pub fn sum_last(&self, x: Var) -> Result<Var> {
        let t = self.with(x, |t| {
            if t.shape.len() < 2 {
                return Err(Error::dim(format!("sum_last needs rank >= 2, got {:?}", t.shape)));
            }
            let n = t.last_dim();
            let data = t.data.chunks(n).map(|c| c.iter().sum()).collect();
            Tensor::new(t.shape[..t.shape.len() - 1].to_vec(), data)
        })?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SumLast(x), rg))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let t = self.with(x, |t| {
            if t.shape.len() != 2 {
                return Err(Error::dim(format!("transpose needs rank 2, got {:?}", t.shape)));
            }
            let (m, n) = (t.shape[0], t.shape[1]);
            Tensor::new(vec![n, m], transpose_raw(&t.data, m, n))
        })?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Transpose(x), rg))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.with(x, |t| {
            if t.shape.is_empty() || len == 0 || start + len > t.shape[0] {
                return Err(Error::dim(format!(
                    "slice_rows {start}..{} of {:?}",
                    start + len,
                    t.shape
                )));
            }
            let w = t.data.len() / t.shape[0];
            let mut shape = t.shape.clone();
            shape[0] = len;
            Tensor::new(shape, t.data[start * w..(start + len) * w].to_vec())
        })?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::SliceRows { x, start }, rg))
    }

    /// Stacks tensors along the leading axis; trailing dimensions must agree.
    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let t = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| Error::dim("concat of zero tensors"))?;
            let tail = nodes[first.0].value.shape.get(1..).unwrap_or(&[]).to_vec();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let v = &nodes[p.0].value;
                if v.shape.is_empty() || v.shape[1..] != tail[..] {
                    return Err(Error::dim(format!(
                        "concat of {:?} with trailing dims {tail:?}",
                        v.shape
                    )));
                }
                rows += v.shape[0];
                data.extend_from_slice(&v.data);
            }
            let mut shape = vec![rows];
            shape.extend(tail);
            Tensor::new(shape, data)?
        };
        let rg = self.rg(parts);
        Ok(self.push(t, Op::Concat(parts.to_vec()), rg))
    }

    /// Gathers rows of `table[v, d]` at `ids`, giving `[ids.len(), d]`.
    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.with(table, |t| {
            if t.shape.len() != 2 {
                return Err(Error::dim(format!("embedding table must be rank 2, got {:?}", t.shape)));
            }
            let (v, d) = (t.shape[0], t.shape[1]);
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= v {
                    return Err(Error::dim(format!("token id {id} outside vocabulary of {v}")));
                }
                data.extend_from_slice(&t.data[id * d..(id + 1) * d]);
            }
            Tensor::new(vec![ids.len(), d], data)
        })?;
        let rg = self.rg(&[table]);
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Normalizes each row of `x[m, d]` to zero mean and unit variance, then
    /// applies the affine `gamma[d]`, `beta[d]`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (t, normalized, inv_std) = {
            let nodes = self.nodes.borrow();
            let (tx, tg, tb) = (&nodes[x.0].value, &nodes[gamma.0].value, &nodes[beta.0].value);
            if tx.shape.len() != 2 || tg.shape != [tx.shape[1]] || tb.shape != [tx.shape[1]] {
                return Err(Error::dim(format!(
                    "layer_norm of {:?} with gamma {:?}, beta {:?}",
                    tx.shape, tg.shape, tb.shape
                )));
            }
            let d = tx.shape[1];
            let mut normalized = Vec::with_capacity(tx.data.len());
            let mut inv_std = Vec::with_capacity(tx.shape[0]);
            for row in tx.data.chunks(d) {
                let mu = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std.push(is);
                normalized.extend(row.iter().map(|v| (v - mu) * is));
            }
            let data = normalized
                .iter()
                .enumerate()
                .map(|(i, n)| n * tg.data[i % d] + tb.data[i % d])
                .collect();
            (Tensor::new(tx.shape.clone(), data)?, normalized, inv_std)
        };
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Softmax of `x / temperature` over the last axis.
    pub fn softmax(&self, x: Var, temperature: f64) -> Result<Var> {
        check_temperature(temperature)?;
        let t = self.with(x, |t| Tensor {
            shape: t.shape.clone(),
            data: softmax_rows(&t.data, t.last_dim(), temperature),
            requires_grad: false,
            grad: None,
        });
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Softmax { x, temperature }, rg))
    }

    /// `x / T - logsumexp(x / T)` over the last axis.
    pub fn log_softmax(&self, x: Var, temperature: f64) -> Result<Var> {
        check_temperature(temperature)?;
        let t = self.with(x, |t| Tensor {
            shape: t.shape.clone(),
            data: log_softmax_rows(&t.data, t.last_dim(), temperature),
            requires_grad: false,
            grad: None,
        });
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::LogSoftmax { x, temperature }, rg))
    }

    /// Reverse accumulation from a scalar node.
    ///
    /// Gradients are added to whatever earlier calls left behind; use
    /// [`Tape::zero_grad`] to reset.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                propagate(&nodes, node, &g, &mut adj);
            }
            adj[id] = Some(g);
        }

        for (node, g) in nodes.iter_mut().zip(adj) {
            if let (true, Some(g)) = (node.requires_grad, g) {
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn add_into(adj: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: Vec<f64>) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut adj[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
            if nodes[a.0].requires_grad {
                let bt = transpose_raw(&tb.data, k, n);
                add_into(adj, nodes, *a, matmul_raw(g, &bt, m, n, k));
            }
            if nodes[b.0].requires_grad {
                let at = transpose_raw(&ta.data, m, k);
                add_into(adj, nodes, *b, matmul_raw(&at, g, k, m, n));
            }
        }
        Op::Add(a, b) => {
            add_into(adj, nodes, *a, g.to_vec());
            add_into(adj, nodes, *b, g.to_vec());
        }
        Op::AddRow(x, row) => {
            add_into(adj, nodes, *x, g.to_vec());
            let n = val(*row).data.len();
            let mut gr = vec![0.0; n];
            for (i, gi) in g.iter().enumerate() {
                gr[i % n] += gi;
            }
            add_into(adj, nodes, *row, gr);
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            add_into(adj, nodes, *a, g.iter().zip(&tb.data).map(|(g, y)| g * y).collect());
            add_into(adj, nodes, *b, g.iter().zip(&ta.data).map(|(g, x)| g * x).collect());
        }
        Op::Scale(x, c) => add_into(adj, nodes, *x, g.iter().map(|v| v * c).collect()),
        Op::Relu(x) => {
            let gx = g
                .iter()
                .zip(&val(*x).data)
                .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                .collect();
            add_into(adj, nodes, *x, gx);
        }
        Op::Sum(x) => add_into(adj, nodes, *x, vec![g[0]; val(*x).data.len()]),
        Op::Mean(x) => {
            let n = val(*x).data.len();
            add_into(adj, nodes, *x, vec![g[0] / n as f64; n]);
        }
        Op::SumLast(x) => {
            let tx = val(*x);
            let n = tx.last_dim();
            let gx = (0..tx.data.len()).map(|i| g[i / n]).collect();
            add_into(adj, nodes, *x, gx);
        }
        Op::Transpose(x) => {
            let (m, n) = (val(*x).shape[0], val(*x).shape[1]);
            // g is [n, m]
            add_into(adj, nodes, *x, transpose_raw(g, n, m));
        }
        Op::SliceRows { x, start } => {
            let tx = val(*x);
            let w = tx.data.len() / tx.shape[0];
            let mut gx = vec![0.0; tx.data.len()];
            gx[start * w..start * w + g.len()].copy_from_slice(g);
            add_into(adj, nodes, *x, gx);
        }
        Op::Concat(parts) => {
            let mut off = 0;
            for p in parts {
                let len = val(*p).data.len();
                add_into(adj, nodes, *p, g[off..off + len].to_vec());
                off += len;
            }
        }
        Op::Embedding { table, ids } => {
            let tt = val(*table);
            let d = tt.shape[1];
            let mut gt = vec![0.0; tt.data.len()];
            for (r, &id) in ids.iter().enumerate() {
                for j in 0..d {
                    gt[id * d + j] += g[r * d + j];
                }
            }
            add_into(adj, nodes, *table, gt);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
        } => {
            let tg = val(*gamma);
            let d = tg.data.len();
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            let mut gx = vec![0.0; g.len()];
            for (r, (grow, nrow)) in g.chunks(d).zip(normalized.chunks(d)).enumerate() {
                let gn: Vec<f64> = grow.iter().zip(&tg.data).map(|(a, b)| a * b).collect();
                let mean_gn = gn.iter().sum::<f64>() / d as f64;
                let mean_gn_n = gn.iter().zip(nrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    gg[j] += grow[j] * nrow[j];
                    gb[j] += grow[j];
                    gx[r * d + j] = inv_std[r] * (gn[j] - mean_gn - nrow[j] * mean_gn_n);
                }
            }
            add_into(adj, nodes, *x, gx);
            add_into(adj, nodes, *gamma, gg);
            add_into(adj, nodes, *beta, gb);
        }
        Op::Softmax { x, temperature } => {
            let y = &node.value.data;
            let n = node.value.last_dim();
            let mut gx = vec![0.0; y.len()];
            for ((gxr, yr), gr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    gxr[j] = yr[j] * (gr[j] - dot) / temperature;
                }
            }
            add_into(adj, nodes, *x, gx);
        }
        Op::LogSoftmax { x, temperature } => {
            let y = &node.value.data;
            let n = node.value.last_dim();
            let mut gx = vec![0.0; y.len()];
            for ((gxr, yr), gr) in gx.chunks_mut(n).zip(y.chunks(n)).zip(g.chunks(n)) {
                let gsum: f64 = gr.iter().sum();
                for j in 0..n {
                    gxr[j] = (gr[j] - yr[j].exp() * gsum) / temperature;
                }
            }
            add_into(adj, nodes, *x, gx);
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("temperature must be positive, got {t}")))
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Row-wise softmax of `data / temperature` with rows of width `n`.
pub fn softmax_rows(data: &[f64], n: usize, temperature: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(n) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
        let start = out.len();
        let mut z = 0.0;
        for &v in row {
            let e = (v / temperature - max).exp();
            z += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= z);
    }
    out
}

/// Row-wise log-softmax of `data / temperature` with rows of width `n`.
pub fn log_softmax_rows(data: &[f64], n: usize, temperature: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(n) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
        let lse = max + row.iter().map(|&v| (v / temperature - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|&v| v / temperature - lse));
    }
    out
}

/// Plain softmax of a logit tensor over its last axis.
pub fn softmax(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    Tensor::new(
        logits.shape.clone(),
        softmax_rows(&logits.data, logits.last_dim(), temperature),
    )
}

/// Plain log-softmax of a logit tensor over its last axis.
pub fn log_softmax(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    Tensor::new(
        logits.shape.clone(),
        log_softmax_rows(&logits.data, logits.last_dim(), temperature),
    )
}
