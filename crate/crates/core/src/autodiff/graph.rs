use std::collections::HashMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Handle to a node recorded on a [`Graph`].
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
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Conv1d {
        x: Var,
        w: Var,
        bias: Var,
        stride: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
    Dropout {
        x: Var,
        factors: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Execution record for one forward pass. Nodes are appended in execution
/// order, so a reverse sweep over the node list is a valid topological order
/// for backpropagation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    backward_done: bool,
    visits: usize,
}

const LN_EPS: f64 = 1e-5;

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated on `v` by the last backward pass, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Number of nodes whose backward rule ran during the last backward pass.
    pub fn backward_visits(&self) -> usize {
        self.visits
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(value, false, Op::Leaf)
    }

    /// A free differentiable input (not tied to a [`ParamStore`]).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push_leaf(value, true, Op::Leaf)
    }

    /// Brings a named parameter onto the graph. Repeated calls with the same
    /// name return the same node, so gradients from every use accumulate in
    /// one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.push_leaf(value, true, Op::Param(name.to_string()))?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters pulled onto this graph so far, by name.
    pub fn param_vars(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Adds gradients of every parameter node into the store's gradient buffers.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for node in &self.nodes {
            if let (Op::Param(name), Some(g)) = (&node.op, &node.grad) {
                let dst = store.grad_mut(name)?;
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
        self.visits = 0;
    }

    // ── Operations ────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).expect_2d("matmul")?;
        let (k2, m) = self.value(b).expect_2d("matmul")?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![n, k],
                rhs: vec![k2, m],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push("matmul", Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push("add", Tensor::new(shape, out)?, Op::Add(a, b), &[a, b])
    }

    /// Adds a length-`d` vector to every row of an `n×d` tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.value(x).expect_2d("add_bias")?;
        if self.value(bias).numel() != d {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: vec![n, d],
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(x, b)| x + b))
            .collect();
        self.push("add_bias", Tensor::new(vec![n, d], out)?, Op::AddBias(x, bias), &[x, bias])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push("mul", Tensor::new(shape, out)?, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", Tensor::new(shape, out)?, Op::Scale(x, s), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        self.push("relu", Tensor::new(shape, out)?, Op::Relu(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.value(x).expect_2d("transpose")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = src[i * m + j];
            }
        }
        self.push("transpose", Tensor::new(vec![m, n], out)?, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax_rows(x, None)
    }

    /// Row-wise softmax where columns with `key_mask[j] == false` receive
    /// exactly zero weight. A row with every column masked is an error.
    pub fn masked_softmax_rows(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let (n, m) = self.value(x).expect_2d("softmax_rows")?;
        if let Some(mask) = key_mask {
            if mask.len() != m {
                return Err(Error::Dimension {
                    op: "softmax_rows",
                    lhs: vec![n, m],
                    rhs: vec![mask.len()],
                });
            }
            if !mask.iter().any(|&k| k) {
                return Err(Error::DegenerateAttention { row: 0 });
            }
        }
        let keep = |j: usize| key_mask.is_none_or(|mk| mk[j]);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &src[i * m..(i + 1) * m];
            let max = (0..m).filter(|&j| keep(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * m..(i + 1) * m];
            let mut total = 0.0;
            for j in 0..m {
                if keep(j) {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        self.push("softmax_rows", Tensor::new(vec![n, m], out)?, Op::Softmax(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.value(x).expect_2d("layer_norm")?;
        for p in [gain, bias] {
            if self.value(p).numel() != d {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: vec![n, d],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        self.push(
            "layer_norm",
            Tensor::new(vec![n, d], out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.value(table).expect_2d("embedding")?;
        if ids.is_empty() {
            return Err(Error::Empty("embedding ids"));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for (position, &id) in ids.iter().enumerate() {
            if id >= vocab {
                return Err(Error::Index { position, id, size: vocab });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        self.push(
            "embedding",
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Embedding { table, ids: ids.to_vec() },
            &[table],
        )
    }

    /// Valid (unpadded) 1-D convolution over the row axis.
    ///
    /// `x` is `m×c_in`, `w` is `kernel×c_in×c_out`, `bias` has `c_out` entries;
    /// the output has `floor((m - kernel) / stride) + 1` rows.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var, stride: usize) -> Result<Var> {
        let (m, c_in) = self.value(x).expect_2d("conv1d")?;
        let [kernel, wc_in, c_out] = *self.shape(w) else {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: vec![m, c_in],
                rhs: self.shape(w).to_vec(),
            });
        };
        if wc_in != c_in || self.value(bias).numel() != c_out {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: vec![m, c_in],
                rhs: vec![kernel, wc_in, c_out],
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv1d stride must be >= 1".into()));
        }
        let out_len = conv_out_len(m, kernel, stride).ok_or(Error::InputTooShort { len: m, kernel })?;
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(bias).data();
        let mut out = vec![0.0; out_len * c_out];
        for t in 0..out_len {
            let dst = &mut out[t * c_out..(t + 1) * c_out];
            dst.copy_from_slice(bs);
            for k in 0..kernel {
                let xrow = &xs[(t * stride + k) * c_in..(t * stride + k + 1) * c_in];
                for (c, &xv) in xrow.iter().enumerate() {
                    let wrow = &ws[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                    for (o, wv) in dst.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
        self.push(
            "conv1d",
            Tensor::new(vec![out_len, c_out], out)?,
            Op::Conv1d { x, w, bias, stride },
            &[x, w, bias],
        )
    }

    /// Mean negative log-likelihood over positions where `mask` is true.
    /// With no unmasked position the loss is 0 and no gradient flows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let (n, c) = self.value(logits).expect_2d("cross_entropy")?;
        if targets.len() != n || mask.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vec![n, c],
                rhs: vec![targets.len(), mask.len()],
            });
        }
        if let Some((position, &id)) = targets.iter().enumerate().find(|(_, &t)| t >= c) {
            return Err(Error::Index { position, id, size: c });
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..n {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
            if mask[i] {
                total += lse - row[targets[i]];
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(
            "cross_entropy",
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
            &[logits],
        )
    }

    /// Inverted dropout. Identity (the same node) when not training or when
    /// `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let factors: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = zip_map(self.value(x).data(), &factors, |v, f| v * f);
        let shape = self.shape(x).to_vec();
        self.push("dropout", Tensor::new(shape, out)?, Op::Dropout { x, factors }, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_rows"))?;
        let cols = self.value(first).expect_2d("concat_rows")?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).expect_2d("concat_rows")?;
            if c != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(first).to_vec(),
                    rhs: vec![r, c],
                });
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            "concat_rows",
            Tensor::new(vec![rows, cols], out)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(x).expect_2d("slice_rows")?;
        if len == 0 || start + len > n {
            return Err(Error::Dimension {
                op: "slice_rows",
                lhs: vec![n, d],
                rhs: vec![start, len],
            });
        }
        let out = self.value(x).data()[start * d..(start + len) * d].to_vec();
        self.push("slice_rows", Tensor::new(vec![len, d], out)?, Op::SliceRows { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat_cols"))?;
        let rows = self.value(first).expect_2d("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).expect_2d("concat_cols")?;
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: vec![r, c],
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(
            "concat_cols",
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(x).expect_2d("slice_cols")?;
        if len == 0 || start + len > d {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: vec![n, d],
                rhs: vec![start, len],
            });
        }
        let src = self.value(x).data();
        let out: Vec<f64> = (0..n)
            .flat_map(|i| src[i * d + start..i * d + start + len].iter().copied())
            .collect();
        self.push("slice_cols", Tensor::new(vec![n, len], out)?, Op::SliceCols { x, start }, &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ── Backward ──────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`, populating gradients of every
    /// differentiable ancestor.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.backward_done = true;
        self.visits = 0;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(g) = node.grad.as_deref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            self.visits += 1;
            backprop_node(before, node, g);
        }
        Ok(())
    }
}

pub fn conv_out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    (len >= kernel && kernel >= 1 && stride >= 1).then(|| (len - kernel) / stride + 1)
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let dst = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in dst.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Runs `f` on the gradient buffer of `v`, allocating it on first use.
/// Nodes that do not require gradients are skipped.
fn with_grad(nodes: &mut [Node], v: Var, f: impl FnOnce(&mut [f64], &Tensor)) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let numel = node.value.numel();
    let grad = node.grad.get_or_insert_with(|| vec![0.0; numel]);
    f(grad, &node.value);
}

fn backprop_node(nodes: &mut [Node], node: &Node, g: &[f64]) {
    let value = &node.value;
    match &node.op {
        Op::Leaf | Op::Param(_) => {}
        Op::MatMul(a, b) => {
            let (n, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
            let m = nodes[b.0].value.cols();
            if nodes[a.0].requires_grad {
                let bv = nodes[b.0].value.data().to_vec();
                with_grad(nodes, *a, |ga, _| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let brow = &bv[p * m..(p + 1) * m];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
            }
            if nodes[b.0].requires_grad {
                let av = nodes[a.0].value.data().to_vec();
                with_grad(nodes, *b, |gb, _| {
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let a_ip = av[i * k + p];
                            if a_ip == 0.0 {
                                continue;
                            }
                            for (d, gv) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                                *d += a_ip * gv;
                            }
                        }
                    }
                });
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                with_grad(nodes, *v, |gv, _| add_into(gv, g));
            }
        }
        Op::AddBias(x, bias) => {
            with_grad(nodes, *x, |gx, _| add_into(gx, g));
            with_grad(nodes, *bias, |gb, _| {
                let d = gb.len();
                for row in g.chunks(d) {
                    add_into(gb, row);
                }
            });
        }
        Op::Mul(a, b) => {
            let av = nodes[a.0].value.data().to_vec();
            let bv = nodes[b.0].value.data().to_vec();
            with_grad(nodes, *a, |ga, _| {
                for ((d, gv), y) in ga.iter_mut().zip(g).zip(&bv) {
                    *d += gv * y;
                }
            });
            with_grad(nodes, *b, |gb, _| {
                for ((d, gv), x) in gb.iter_mut().zip(g).zip(&av) {
                    *d += gv * x;
                }
            });
        }
        Op::Scale(x, s) => with_grad(nodes, *x, |gx, _| {
            for (d, gv) in gx.iter_mut().zip(g) {
                *d += s * gv;
            }
        }),
        Op::Relu(x) => with_grad(nodes, *x, |gx, xv| {
            for ((d, gv), v) in gx.iter_mut().zip(g).zip(xv.data()) {
                if *v > 0.0 {
                    *d += gv;
                }
            }
        }),
        Op::Sum(x) => with_grad(nodes, *x, |gx, _| {
            for d in gx.iter_mut() {
                *d += g[0];
            }
        }),
        Op::Transpose(x) => {
            let (m, n) = (value.rows(), value.cols());
            with_grad(nodes, *x, |gx, _| {
                for i in 0..n {
                    for j in 0..m {
                        gx[i * m + j] += g[j * n + i];
                    }
                }
            });
        }
        Op::Reshape(x) => with_grad(nodes, *x, |gx, _| add_into(gx, g)),
        Op::Softmax(x) => {
            let (n, m) = (value.rows(), value.cols());
            let y = value.data();
            with_grad(nodes, *x, |gx, _| {
                for i in 0..n {
                    let yr = &y[i * m..(i + 1) * m];
                    let gr = &g[i * m..(i + 1) * m];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        gx[i * m + j] += yr[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let (n, d) = (value.rows(), value.cols());
            let gain_v = nodes[gain.0].value.data().to_vec();
            with_grad(nodes, *gain, |gg, _| {
                for (i, row) in g.chunks(d).enumerate() {
                    for j in 0..d {
                        gg[j] += row[j] * xhat[i * d + j];
                    }
                }
            });
            with_grad(nodes, *bias, |gb, _| {
                for row in g.chunks(d) {
                    add_into(gb, row);
                }
            });
            with_grad(nodes, *x, |gx, _| {
                let mut dxhat = vec![0.0; d];
                for i in 0..n {
                    let h = &xhat[i * d..(i + 1) * d];
                    for j in 0..d {
                        dxhat[j] = g[i * d + j] * gain_v[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dh = dxhat.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        gx[i * d + j] += inv_std[i] * (dxhat[j] - mean_d - h[j] * mean_dh);
                    }
                }
            });
        }
        Op::Embedding { table, ids } => with_grad(nodes, *table, |gt, tv| {
            let d = tv.cols();
            for (row, &id) in ids.iter().enumerate() {
                add_into(&mut gt[id * d..(id + 1) * d], &g[row * d..(row + 1) * d]);
            }
        }),
        Op::Conv1d { x, w, bias, stride } => {
            let out_len = value.rows();
            let c_out = value.cols();
            let [kernel, c_in, _] = *nodes[w.0].value.shape() else {
                unreachable!("conv1d weight is rank 3")
            };
            let xv = nodes[x.0].value.data().to_vec();
            let wv = nodes[w.0].value.data().to_vec();
            with_grad(nodes, *bias, |gb, _| {
                for row in g.chunks(c_out) {
                    add_into(gb, row);
                }
            });
            with_grad(nodes, *w, |gw, _| {
                for t in 0..out_len {
                    let grow = &g[t * c_out..(t + 1) * c_out];
                    for k in 0..kernel {
                        let base = (t * stride + k) * c_in;
                        for c in 0..c_in {
                            let xval = xv[base + c];
                            let dst = &mut gw[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                            for (d, gv) in dst.iter_mut().zip(grow) {
                                *d += xval * gv;
                            }
                        }
                    }
                }
            });
            with_grad(nodes, *x, |gx, _| {
                for t in 0..out_len {
                    let grow = &g[t * c_out..(t + 1) * c_out];
                    for k in 0..kernel {
                        let base = (t * stride + k) * c_in;
                        for c in 0..c_in {
                            let wrow = &wv[(k * c_in + c) * c_out..(k * c_in + c + 1) * c_out];
                            gx[base + c] += wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            });
        }
        Op::CrossEntropy {
            logits,
            targets,
            mask,
            probs,
            count,
        } => {
            if *count == 0 {
                return;
            }
            let scale = g[0] / *count as f64;
            with_grad(nodes, *logits, |gl, lv| {
                let c = lv.cols();
                for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                    if !m {
                        continue;
                    }
                    for j in 0..c {
                        let indicator = if j == t { 1.0 } else { 0.0 };
                        gl[i * c + j] += scale * (probs[i * c + j] - indicator);
                    }
                }
            });
        }
        Op::Dropout { x, factors } => with_grad(nodes, *x, |gx, _| {
            for ((d, gv), f) in gx.iter_mut().zip(g).zip(factors) {
                *d += gv * f;
            }
        }),
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].value.numel();
                with_grad(nodes, *p, |gp, _| add_into(gp, &g[offset..offset + len]));
                offset += len;
            }
        }
        Op::SliceRows { x, start } => {
            let d = value.cols();
            with_grad(nodes, *x, |gx, _| add_into(&mut gx[start * d..start * d + g.len()], g));
        }
        Op::ConcatCols(parts) => {
            let total = value.cols();
            let mut offset = 0;
            for p in parts {
                let w = nodes[p.0].value.cols();
                with_grad(nodes, *p, |gp, _| {
                    for (i, dst) in gp.chunks_mut(w).enumerate() {
                        add_into(dst, &g[i * total + offset..i * total + offset + w]);
                    }
                });
                offset += w;
            }
        }
        Op::SliceCols { x, start } => {
            let len = value.cols();
            with_grad(nodes, *x, |gx, xv| {
                let d = xv.cols();
                for (i, src) in g.chunks(len).enumerate() {
                    add_into(&mut gx[i * d + start..i * d + start + len], src);
                }
            });
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
