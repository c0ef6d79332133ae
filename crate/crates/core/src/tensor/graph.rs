//! Dynamic computation graph with reverse-mode differentiation.
//!
//! The graph is rebuilt for every forward pass. Nodes are appended in
//! evaluation order, so every input id of node `k` is smaller than `k` and a
//! single reverse sweep visits nodes in a valid topological order.

use std::collections::BTreeMap;

use super::params::{ParamId, ParamStore, Trainable};
use super::{dot, gemm_acc, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{DartError, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Gelu(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SelectCols {
        x: Var,
        cols: Vec<usize>,
    },
    NormalizeRows(Var),
    PickPerRow {
        x: Var,
        cols: Vec<usize>,
    },
    LogFloor {
        x: Var,
        floor: f32,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    AddN(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    params: BTreeMap<ParamId, Var>,
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_K: f32 = 0.044_715;

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.matrix_dims().ok_or_else(|| DartError::dims(op, t.shape(), &[]))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a registry parameter. Repeated calls return the same
    /// node, so a tensor used in two places (tied weights) is one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let rg = p.trainable != Trainable::Frozen;
        let v = self.push(p.value.clone(), Op::Param, rg);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Input node ids of `v`, for graph inspection.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        op_inputs(&self.nodes[v.0].op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(DartError::dims("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for a[m×k], b[n×k].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul_nt")?;
        let (n, k2) = dims2(self.value(b), "matmul_nt")?;
        if k != k2 || self.shape(a).len() != 2 || self.shape(b).len() != 2 {
            return Err(DartError::dims("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(DartError::dims("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    /// Broadcast-add a bias vector over the rows of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = dims2(self.value(a), "add_row")?;
        if self.value(bias).numel() != n {
            return Err(DartError::dims("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(DartError::dims("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape, data }, Op::Scale(a, c), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape, data }, Op::Gelu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape, data }, Op::Tanh(a), rg)
    }

    /// Softmax over the last dimension, computed with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = *x.shape().last().unwrap_or(&1);
        if n == 0 {
            return Err(DartError::dims("softmax_rows", x.shape(), &[]));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(DartError::Numeric("non-finite input to softmax".into()));
        }
        let mut data = Vec::with_capacity(x.numel());
        for row in x.data().chunks(n) {
            let max = f64::from(row.iter().copied().fold(f32::NEG_INFINITY, f32::max));
            let exps: Vec<f64> = row.iter().map(|&v| (f64::from(v) - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            data.extend(exps.iter().map(|e| (e / sum) as f32));
        }
        let shape = x.shape().to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape, data }, Op::SoftmaxRows(a), rg))
    }

    /// Row-wise layer normalization with affine gain/bias over the last
    /// dimension. A zero-variance row normalizes to zeros.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(DartError::Config(format!("layer norm eps must be positive, got {eps}")));
        }
        let (rows, n) = dims2(self.value(x), "layer_norm")?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(DartError::dims("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; rows * n];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f32>() / n as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            let constant = row.iter().all(|&v| v == row[0]);
            for c in 0..n {
                let h = if constant { 0.0 } else { (row[c] - mean) * rs };
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor { shape, data: out },
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Rows of `table` at `ids`; the result is `[ids.len() × d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = dims2(self.value(table), "gather")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(DartError::Index {
                    what: "embedding table",
                    index: id,
                    bound: v,
                });
            }
            data.extend_from_slice(self.value(table).row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "slice_cols")?;
        if start + len > n {
            return Err(DartError::Index {
                what: "column slice",
                index: start + len,
                bound: n,
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![m, len],
                data,
            },
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| DartError::Contract("concat of zero tensors".into()))?;
        let (m, _) = dims2(self.value(first), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = dims2(self.value(p), "concat_cols")?;
            if pm != m {
                return Err(DartError::dims("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor {
                shape: vec![m, total],
                data,
            },
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    pub fn select_cols(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "select_cols")?;
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(DartError::Index {
                what: "column selection",
                index: bad,
                bound: n,
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * cols.len());
        for r in 0..m {
            data.extend(cols.iter().map(|&c| src[r * n + c]));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![m, cols.len()],
                data,
            },
            Op::SelectCols { x, cols: cols.to_vec() },
            rg,
        ))
    }

    /// `out[r] = x[r, cols[r]]`, a vector with one entry per row.
    pub fn pick_per_row(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.value(x), "pick_per_row")?;
        if cols.len() != m {
            return Err(DartError::dims("pick_per_row", self.shape(x), &[cols.len()]));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(DartError::Index {
                what: "row pick",
                index: bad,
                bound: n,
            });
        }
        let src = self.value(x).data();
        let data = cols.iter().enumerate().map(|(r, &c)| src[r * n + c]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor { shape: vec![m], data },
            Op::PickPerRow { x, cols: cols.to_vec() },
            rg,
        ))
    }

    /// Divide every row by its sum.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (_, n) = dims2(self.value(x), "normalize_rows")?;
        let mut data = Vec::with_capacity(self.value(x).numel());
        for row in self.value(x).data().chunks(n) {
            let s: f32 = row.iter().sum();
            if !(s.is_finite() && s > 0.0) {
                return Err(DartError::Numeric(format!("cannot normalize row with sum {s}")));
            }
            data.extend(row.iter().map(|v| v / s));
        }
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor { shape, data }, Op::NormalizeRows(x), rg))
    }

    /// `ln(max(x, floor))`; entries at or below the floor pass no gradient.
    pub fn log_floor(&mut self, x: Var, floor: f32) -> Var {
        let data = self.value(x).data().iter().map(|&v| v.max(floor).ln()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        self.push(Tensor { shape, data }, Op::LogFloor { x, floor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f32>() / t.numel().max(1) as f32;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(DartError::dims("reshape", t.shape(), shape));
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: t.data().to_vec(),
        };
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Elementwise sum of same-shaped tensors.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs
            .first()
            .ok_or_else(|| DartError::Contract("add_n of zero tensors".into()))?;
        let shape = self.shape(first).to_vec();
        let mut data = vec![0.0; self.value(first).numel()];
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(DartError::dims("add_n", &shape, self.shape(x)));
            }
            for (d, v) in data.iter_mut().zip(self.value(x).data()) {
                *d += v;
            }
        }
        let rg = self.rg(xs);
        Ok(self.push(Tensor { shape, data }, Op::AddN(xs.to_vec()), rg))
    }

    /// Mean of scalar nodes.
    pub fn mean_of(&mut self, xs: &[Var]) -> Result<Var> {
        let total = self.add_n(xs)?;
        Ok(self.scale(total, 1.0 / xs.len() as f32))
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate across calls
    /// until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(DartError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut tmp: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        tmp[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = tmp[idx].take() else { continue };
            if self.nodes[idx].requires_grad {
                self.propagate(idx, &g, &mut tmp);
            }
            match &mut self.grads[idx] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Push gradients of parameter leaves into the registry, honoring each
    /// parameter's trainability.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                store.accumulate_grad(id, g);
            }
        }
    }

    fn propagate(&self, idx: usize, g: &[f32], tmp: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).matrix_dims().unwrap();
                let n = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let da = slot(tmp, *a, m * k);
                    gemm_nt_acc(g, self.value(*b).data(), da, m, n, k);
                }
                if self.requires_grad(*b) {
                    let db = slot(tmp, *b, k * n);
                    gemm_tn_acc(self.value(*a).data(), g, db, m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).matrix_dims().unwrap();
                let n = self.value(*b).shape()[0];
                if self.requires_grad(*a) {
                    let da = slot(tmp, *a, m * k);
                    gemm_acc(g, self.value(*b).data(), da, m, n, k);
                }
                if self.requires_grad(*b) {
                    let db = slot(tmp, *b, n * k);
                    gemm_tn_acc(g, self.value(*a).data(), db, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        add_into(slot(tmp, v, g.len()), g);
                    }
                }
            }
            Op::AddRow(a, bias) => {
                if self.requires_grad(*a) {
                    add_into(slot(tmp, *a, g.len()), g);
                }
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).numel();
                    let db = slot(tmp, *bias, n);
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(*a) {
                    let bv = self.value(*b).data();
                    let da = slot(tmp, *a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if self.requires_grad(*b) {
                    let av = self.value(*a).data();
                    let db = slot(tmp, *b, g.len());
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                let da = slot(tmp, *a, g.len());
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += c * gv;
                }
            }
            Op::Gelu(a) => {
                let xs = self.value(*a).data();
                let da = slot(tmp, *a, g.len());
                for i in 0..g.len() {
                    let x = xs[i];
                    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                    da[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
                }
            }
            Op::Tanh(a) => {
                let ys = out.data();
                let da = slot(tmp, *a, g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * (1.0 - ys[i] * ys[i]);
                }
            }
            Op::SoftmaxRows(a) => {
                let n = *out.shape().last().unwrap();
                let da = slot(tmp, *a, g.len());
                for (r, (grow, yrow)) in g.chunks(n).zip(out.data().chunks(n)).enumerate() {
                    let inner = dot(grow, yrow);
                    let drow = &mut da[r * n..(r + 1) * n];
                    for c in 0..n {
                        drow[c] += yrow[c] * (grow[c] - inner);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = self.value(*gain).numel();
                if self.requires_grad(*gain) {
                    let dg = slot(tmp, *gain, n);
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            dg[c] += grow[c] * hrow[c];
                        }
                    }
                }
                if self.requires_grad(*bias) {
                    let db = slot(tmp, *bias, n);
                    for grow in g.chunks(n) {
                        add_into(db, grow);
                    }
                }
                if self.requires_grad(*x) {
                    let gn = self.value(*gain).data();
                    let dx = slot(tmp, *x, g.len());
                    let mut dh = vec![0.0; n];
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        for c in 0..n {
                            dh[c] = grow[c] * gn[c];
                        }
                        let mean_dh = dh.iter().sum::<f32>() / n as f32;
                        let mean_dh_h = dot(&dh, hrow) / n as f32;
                        let drow = &mut dx[r * n..(r + 1) * n];
                        for c in 0..n {
                            drow[c] += rstd[r] * (dh[c] - mean_dh - hrow[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Gather { table, ids } => {
                let (v, d) = self.value(*table).matrix_dims().unwrap();
                let dt = slot(tmp, *table, v * d);
                for (i, &id) in ids.iter().enumerate() {
                    add_into(&mut dt[id * d..(id + 1) * d], &g[i * d..(i + 1) * d]);
                }
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.value(*x).matrix_dims().unwrap();
                let len = out.shape()[1];
                let dx = slot(tmp, *x, m * n);
                for r in 0..m {
                    add_into(&mut dx[r * n + start..r * n + start + len], &g[r * len..(r + 1) * len]);
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.shape()[1];
                let m = out.shape()[0];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape()[1];
                    if self.requires_grad(p) {
                        let dp = slot(tmp, p, m * w);
                        for r in 0..m {
                            add_into(
                                &mut dp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::SelectCols { x, cols } => {
                let (m, n) = self.value(*x).matrix_dims().unwrap();
                let dx = slot(tmp, *x, m * n);
                for r in 0..m {
                    for (j, &c) in cols.iter().enumerate() {
                        dx[r * n + c] += g[r * cols.len() + j];
                    }
                }
            }
            Op::NormalizeRows(x) => {
                let n = *out.shape().last().unwrap();
                let xs = self.value(*x).data();
                let dx = slot(tmp, *x, g.len());
                for r in 0..g.len() / n {
                    let s: f32 = xs[r * n..(r + 1) * n].iter().sum();
                    let inner = dot(&g[r * n..(r + 1) * n], &out.data()[r * n..(r + 1) * n]);
                    for c in 0..n {
                        dx[r * n + c] += (g[r * n + c] - inner) / s;
                    }
                }
            }
            Op::PickPerRow { x, cols } => {
                let (m, n) = self.value(*x).matrix_dims().unwrap();
                let dx = slot(tmp, *x, m * n);
                for (r, &c) in cols.iter().enumerate() {
                    dx[r * n + c] += g[r];
                }
            }
            Op::LogFloor { x, floor } => {
                let xs = self.value(*x).data();
                let dx = slot(tmp, *x, g.len());
                for i in 0..g.len() {
                    if xs[i] > *floor {
                        dx[i] += g[i] / xs[i];
                    }
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                let dx = slot(tmp, *x, n);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let dx = slot(tmp, *x, n);
                let gv = g[0] / n as f32;
                dx.iter_mut().for_each(|d| *d += gv);
            }
            Op::Reshape(x) => add_into(slot(tmp, *x, g.len()), g),
            Op::AddN(xs) => {
                for &x in xs {
                    if self.requires_grad(x) {
                        add_into(slot(tmp, x, g.len()), g);
                    }
                }
            }
        }
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param => Vec::new(),
        Op::MatMul(a, b) | Op::MatMulNt(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::Gelu(a)
        | Op::Tanh(a)
        | Op::SoftmaxRows(a)
        | Op::NormalizeRows(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::Reshape(a) => vec![*a],
        Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
        Op::Gather { table, .. } => vec![*table],
        Op::SliceCols { x, .. } | Op::SelectCols { x, .. } | Op::PickPerRow { x, .. } | Op::LogFloor { x, .. } => {
            vec![*x]
        }
        Op::ConcatCols(xs) | Op::AddN(xs) => xs.clone(),
    }
}

fn slot(tmp: &mut [Option<Vec<f32>>], v: Var, len: usize) -> &mut [f32] {
    tmp[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
