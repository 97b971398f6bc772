//! Reverse-mode autodiff over a linear tape of primitive applications.
//!
//! A forward pass records one node per primitive; node ids are
//! topologically ordered by construction, and `backward` replays the
//! tape once in reverse. Tensors attached to nodes are immutable, and a
//! tape is confined to one logical thread; parallelism happens one
//! level up, never inside a single forward/backward.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gradient::Gradient;
use crate::tensor::Tensor;

/// Index of a recorded node. Inputs always precede outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

const GELU_C: f64 = 0.044_715;

#[derive(Debug, Clone)]
enum Op {
    /// Constant or parameter input. Parameters carry a name and receive
    /// gradient entries; constants do not.
    Leaf { param_name: Option<String> },
    Matmul { a: NodeId, b: NodeId },
    /// Elementwise add; `b` may be a vector broadcast across rows of `a`.
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Elementwise mul; `b` may be a vector broadcast across rows of `a`.
    Mul { a: NodeId, b: NodeId },
    MulScalar { x: NodeId, c: f64 },
    Relu { x: NodeId },
    Gelu { x: NodeId },
    /// Row-wise softmax over the trailing dimension, max-subtracted.
    Softmax { x: NodeId },
    /// Row-wise log softmax via log-sum-exp.
    LogSoftmax { x: NodeId },
    Log { x: NodeId },
    /// Row-wise (x - mean) / sqrt(var + eps) over the trailing dimension.
    LayerNorm { x: NodeId, eps: f64 },
    /// Rows of `table` gathered by fixed indices; backward scatter-adds.
    Embedding { table: NodeId, ids: Vec<usize> },
    Reshape { x: NodeId },
    ReduceMean { x: NodeId },
    ReduceSum { x: NodeId },
    /// 2-D transpose.
    Transpose { x: NodeId },
    SliceRows { x: NodeId, start: usize, len: usize },
    SliceCols { x: NodeId, start: usize, len: usize },
    /// Concatenation along the trailing dimension.
    ConcatCols { xs: Vec<NodeId> },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Wengert tape: ordered primitive applications with saved activations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value, needs_grad });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Record a constant input (no gradient).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { param_name: None }, value, false)
    }

    /// Record a named parameter leaf; `backward` returns an entry for it.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.push(Op::Leaf { param_name: Some(name.into()) }, value, true)
    }

    // ── primitives ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("expects 2-D inputs, got {:?} and {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions {k} != {k2} (lhs {:?}, rhs {:?})", ta.shape(), tb.shape()),
            ));
        }
        let out = matmul_raw(ta.values(), tb.values(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul { a, b }, Tensor::new(vec![m, n], out)?, needs))
    }

    fn binary_shapes(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<bool> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return Ok(false);
        }
        // Broadcast: rhs is a vector matching the trailing dimension.
        if tb.shape().len() == 1 && tb.last_dim() == ta.last_dim() {
            return Ok(true);
        }
        Err(Error::shape(
            op,
            format!("shapes {:?} and {:?} neither match nor broadcast", ta.shape(), tb.shape()),
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.binary_shapes("add", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = ta.last_dim();
        let out = ta
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + if broadcast { tb.values()[i % cols] } else { tb.values()[i] })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, value, needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.binary_shapes("sub", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = ta.last_dim();
        let out = ta
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v - if broadcast { tb.values()[i % cols] } else { tb.values()[i] })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub { a, b }, value, needs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let broadcast = self.binary_shapes("mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let cols = ta.last_dim();
        let out = ta
            .values()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * if broadcast { tb.values()[i % cols] } else { tb.values()[i] })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul { a, b }, value, needs))
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let tx = self.value(x);
        let out: Vec<f64> = tx.values().iter().map(|&v| v * c).collect();
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::MulScalar { x, c }, value, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let out = tx.values().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Relu { x }, value, needs)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let out = tx.values().iter().map(|&v| gelu_fwd(v)).collect();
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Gelu { x }, value, needs)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let (rows, cols) = (tx.row_count(), tx.last_dim());
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            softmax_row(&tx.values()[r * cols..(r + 1) * cols], &mut out[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Softmax { x }, value, needs)
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let (rows, cols) = (tx.row_count(), tx.last_dim());
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.values()[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
            for c in 0..cols {
                out[r * cols + c] = row[c] - lse;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::LogSoftmax { x }, value, needs)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let out = tx.values().iter().map(|&v| v.ln()).collect();
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::Log { x }, value, needs)
    }

    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> NodeId {
        let tx = self.value(x);
        let (rows, cols) = (tx.row_count(), tx.last_dim());
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.values()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for c in 0..cols {
                out[r * cols + c] = (row[c] - mean) * inv;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), out).expect("same shape");
        let needs = self.needs(x);
        self.push(Op::LayerNorm { x, eps }, value, needs)
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tt = self.value(table);
        if tt.shape().len() != 2 {
            return Err(Error::shape(
                "embedding",
                format!("table must be 2-D, got {:?}", tt.shape()),
            ));
        }
        let (vocab, dim) = (tt.shape()[0], tt.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::OutOfVocab { id: bad, vocab });
        }
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            out.extend_from_slice(&tt.values()[id * dim..(id + 1) * dim]);
        }
        let value = Tensor::new(vec![ids.len(), dim], out)?;
        let needs = self.needs(table);
        Ok(self.push(Op::Embedding { table, ids: ids.to_vec() }, value, needs))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let tx = self.value(x);
        let numel: usize = shape.iter().product();
        if numel != tx.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} ({} values) cannot reshape to {shape:?} ({numel})", tx.shape(), tx.numel()),
            ));
        }
        let value = Tensor::new(shape, tx.values().to_vec())?;
        let needs = self.needs(x);
        Ok(self.push(Op::Reshape { x }, value, needs))
    }

    pub fn reduce_mean(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let mean = tx.values().iter().sum::<f64>() / tx.numel() as f64;
        let needs = self.needs(x);
        self.push(Op::ReduceMean { x }, Tensor::scalar(mean), needs)
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> NodeId {
        let tx = self.value(x);
        let sum = tx.values().iter().sum::<f64>();
        let needs = self.needs(x);
        self.push(Op::ReduceSum { x }, Tensor::scalar(sum), needs)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("expects 2-D input, got {:?}", tx.shape()),
            ));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        let out = transpose_raw(tx.values(), r, c);
        let needs = self.needs(x);
        Ok(self.push(Op::Transpose { x }, Tensor::new(vec![c, r], out)?, needs))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape(
                "slice_rows",
                format!("expects 2-D input, got {:?}", tx.shape()),
            ));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        if start + len > r || len == 0 {
            return Err(Error::shape(
                "slice_rows",
                format!("rows {start}..{} out of 0..{r}", start + len),
            ));
        }
        let out = tx.values()[start * c..(start + len) * c].to_vec();
        let needs = self.needs(x);
        Ok(self.push(Op::SliceRows { x, start, len }, Tensor::new(vec![len, c], out)?, needs))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::shape(
                "slice_cols",
                format!("expects 2-D input, got {:?}", tx.shape()),
            ));
        }
        let (r, c) = (tx.shape()[0], tx.shape()[1]);
        if start + len > c || len == 0 {
            return Err(Error::shape(
                "slice_cols",
                format!("cols {start}..{} out of 0..{c}", start + len),
            ));
        }
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&tx.values()[row * c + start..row * c + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(Op::SliceCols { x, start, len }, Tensor::new(vec![r, len], out)?, needs))
    }

    /// Concatenate along the trailing dimension. All inputs must agree on
    /// every leading dimension; 1-D inputs concatenate into one vector.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::invalid("concat_cols of zero tensors"));
        }
        let rows = self.value(xs[0]).row_count();
        let ndim = self.value(xs[0]).shape().len();
        let mut total = 0;
        for &x in xs {
            let t = self.value(x);
            if t.row_count() != rows || t.shape().len() != ndim {
                return Err(Error::shape(
                    "concat_cols",
                    format!("{:?} does not align with {:?}", t.shape(), self.value(xs[0]).shape()),
                ));
            }
            total += t.last_dim();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &x in xs {
                let t = self.value(x);
                let c = t.last_dim();
                out.extend_from_slice(&t.values()[r * c..(r + 1) * c]);
            }
        }
        let shape = if ndim == 1 { vec![total] } else { vec![rows, total] };
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(Op::ConcatCols { xs: xs.to_vec() }, Tensor::new(shape, out)?, needs))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss node. Returns one gradient entry per
    /// named parameter leaf recorded on the tape (zeros when the loss is
    /// constant in that parameter); constant leaves are skipped.
    pub fn backward(&self, loss: NodeId) -> Result<Gradient> {
        if !self.value(loss).is_scalar() {
            return Err(Error::invalid(format!(
                "backward requires a scalar loss node, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let dy = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(idx, &dy, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf { .. }) {
                grads[idx] = Some(dy); // leaves keep their accumulated gradient
            }
        }

        let mut entries = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param_name: Some(name) } = &node.op {
                let values = grads[idx].take().unwrap_or_else(|| vec![0.0; node.value.numel()]);
                let tensor = Tensor::new(node.value.shape().to_vec(), values)?;
                if entries.insert(name.clone(), tensor).is_some() {
                    return Err(Error::invalid(format!("parameter '{name}' registered twice on tape")));
                }
            }
        }
        Ok(Gradient::from_map(entries))
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: NodeId, contrib: &[f64]) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(contrib) {
                    *e += c;
                }
            }
            None => grads[target.0] = Some(contrib.to_vec()),
        }
    }

    fn backprop_node(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf { .. } => {}

            Op::Matmul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let bt = transpose_raw(tb.values(), k, n);
                    let da = matmul_raw(dy, &bt, m, n, k);
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let at = transpose_raw(ta.values(), m, k);
                    let db = matmul_raw(&at, dy, k, m, n);
                    self.accumulate(grads, *b, &db);
                }
            }

            Op::Add { a, b } => {
                self.accumulate(grads, *a, dy);
                if self.needs(*b) {
                    let tb = self.value(*b);
                    if tb.shape() == self.value(*a).shape() {
                        self.accumulate(grads, *b, dy);
                    } else {
                        self.accumulate(grads, *b, &sum_rows(dy, tb.last_dim()));
                    }
                }
            }

            Op::Sub { a, b } => {
                self.accumulate(grads, *a, dy);
                if self.needs(*b) {
                    let tb = self.value(*b);
                    let neg: Vec<f64> = dy.iter().map(|&v| -v).collect();
                    if tb.shape() == self.value(*a).shape() {
                        self.accumulate(grads, *b, &neg);
                    } else {
                        self.accumulate(grads, *b, &sum_rows(&neg, tb.last_dim()));
                    }
                }
            }

            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let cols = ta.last_dim();
                let broadcast = tb.shape() != ta.shape();
                if self.needs(*a) {
                    let da: Vec<f64> = dy
                        .iter()
                        .enumerate()
                        .map(|(i, &d)| d * if broadcast { tb.values()[i % cols] } else { tb.values()[i] })
                        .collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.needs(*b) {
                    let full: Vec<f64> = dy.iter().zip(ta.values()).map(|(&d, &av)| d * av).collect();
                    if broadcast {
                        self.accumulate(grads, *b, &sum_rows(&full, cols));
                    } else {
                        self.accumulate(grads, *b, &full);
                    }
                }
            }

            Op::MulScalar { x, c } => {
                let dx: Vec<f64> = dy.iter().map(|&d| d * c).collect();
                self.accumulate(grads, *x, &dx);
            }

            Op::Relu { x } => {
                let tx = self.value(*x);
                let dx: Vec<f64> = dy
                    .iter()
                    .zip(tx.values())
                    .map(|(&d, &v)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }

            Op::Gelu { x } => {
                let tx = self.value(*x);
                let dx: Vec<f64> = dy.iter().zip(tx.values()).map(|(&d, &v)| d * gelu_grad(v)).collect();
                self.accumulate(grads, *x, &dx);
            }

            Op::Softmax { x } => {
                let p = &node.value;
                let (rows, cols) = (p.row_count(), p.last_dim());
                let mut dx = vec![0.0; p.numel()];
                for r in 0..rows {
                    let base = r * cols;
                    let dot: f64 = (0..cols).map(|c| dy[base + c] * p.values()[base + c]).sum();
                    for c in 0..cols {
                        dx[base + c] = p.values()[base + c] * (dy[base + c] - dot);
                    }
                }
                self.accumulate(grads, *x, &dx);
            }

            Op::LogSoftmax { x } => {
                let lsm = &node.value;
                let (rows, cols) = (lsm.row_count(), lsm.last_dim());
                let mut dx = vec![0.0; lsm.numel()];
                for r in 0..rows {
                    let base = r * cols;
                    let dsum: f64 = (0..cols).map(|c| dy[base + c]).sum();
                    for c in 0..cols {
                        dx[base + c] = dy[base + c] - lsm.values()[base + c].exp() * dsum;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }

            Op::Log { x } => {
                let tx = self.value(*x);
                let dx: Vec<f64> = dy.iter().zip(tx.values()).map(|(&d, &v)| d / v).collect();
                self.accumulate(grads, *x, &dx);
            }

            Op::LayerNorm { x, eps } => {
                let tx = self.value(*x);
                let y = &node.value;
                let (rows, cols) = (tx.row_count(), tx.last_dim());
                let nf = cols as f64;
                let mut dx = vec![0.0; tx.numel()];
                for r in 0..rows {
                    let base = r * cols;
                    let row = &tx.values()[base..base + cols];
                    let mean = row.iter().sum::<f64>() / nf;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                    let inv = 1.0 / (var + eps).sqrt();
                    let dy_mean: f64 = (0..cols).map(|c| dy[base + c]).sum::<f64>() / nf;
                    let dyy_mean: f64 =
                        (0..cols).map(|c| dy[base + c] * y.values()[base + c]).sum::<f64>() / nf;
                    for c in 0..cols {
                        dx[base + c] =
                            inv * (dy[base + c] - dy_mean - y.values()[base + c] * dyy_mean);
                    }
                }
                self.accumulate(grads, *x, &dx);
            }

            Op::Embedding { table, ids } => {
                let tt = self.value(*table);
                let dim = tt.shape()[1];
                let mut dt = vec![0.0; tt.numel()];
                for (row, &id) in ids.iter().enumerate() {
                    for c in 0..dim {
                        dt[id * dim + c] += dy[row * dim + c];
                    }
                }
                self.accumulate(grads, *table, &dt);
            }

            Op::Reshape { x } => {
                self.accumulate(grads, *x, dy);
            }

            Op::ReduceMean { x } => {
                let n = self.value(*x).numel();
                let dx = vec![dy[0] / n as f64; n];
                self.accumulate(grads, *x, &dx);
            }

            Op::ReduceSum { x } => {
                let n = self.value(*x).numel();
                let dx = vec![dy[0]; n];
                self.accumulate(grads, *x, &dx);
            }

            Op::Transpose { x } => {
                let tx = self.value(*x);
                let (r, c) = (tx.shape()[0], tx.shape()[1]);
                // dy has shape [c, r]; transpose back.
                let dx = transpose_raw(dy, c, r);
                self.accumulate(grads, *x, &dx);
            }

            Op::SliceRows { x, start, len } => {
                let tx = self.value(*x);
                let c = tx.shape()[1];
                let mut dx = vec![0.0; tx.numel()];
                dx[start * c..(start + len) * c].copy_from_slice(dy);
                self.accumulate(grads, *x, &dx);
            }

            Op::SliceCols { x, start, len } => {
                let tx = self.value(*x);
                let (r, c) = (tx.shape()[0], tx.shape()[1]);
                let mut dx = vec![0.0; tx.numel()];
                for row in 0..r {
                    for k in 0..*len {
                        dx[row * c + start + k] = dy[row * len + k];
                    }
                }
                self.accumulate(grads, *x, &dx);
            }

            Op::ConcatCols { xs } => {
                let rows = node.value.row_count();
                let total = node.value.last_dim();
                let mut offset = 0;
                for &x in xs {
                    let t = self.value(x);
                    let c = t.last_dim();
                    if self.needs(x) {
                        let mut dx = vec![0.0; t.numel()];
                        for r in 0..rows {
                            for k in 0..c {
                                dx[r * c + k] = dy[r * total + offset + k];
                            }
                        }
                        self.accumulate(grads, x, &dx);
                    }
                    offset += c;
                }
            }
        }
    }
}

// ── scalar helpers ──────────────────────────────────────────────────

fn gelu_fwd(x: f64) -> f64 {
    let u = (2.0 / std::f64::consts::PI).sqrt() * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// Column-wise sum of a `[rows, cols]` buffer, for broadcast backward.
fn sum_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, &v) in x.iter().enumerate() {
        out[i % cols] += v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_symmetry() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let p = tape.softmax(x);
        assert_eq!(tape.value(p).values(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = tape.leaf(Tensor::matrix(2, 2, vec![3.0, -1.0, 2.5, 7.0]).unwrap());
        let out = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(out).values(), tape.value(a).values());
    }

    #[test]
    fn matmul_rejects_mismatch_naming_dims() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![4, 2]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains('3') && err.contains('4'), "{err}");
    }

    #[test]
    fn layer_norm_hand_computed() {
        // mean 2, biased var 1 → normalized to ±1 up to the eps correction.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 3.0]));
        let y = tape.layer_norm(x, 1e-5);
        let v = tape.value(y).values();
        let expect = 1.0 / (1.0 + 1e-5f64).sqrt();
        assert!(close(v[0], -expect, 1e-12) && close(v[1], expect, 1e-12), "{v:?}");
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::matrix(2, 3, vec![1.0, -2.0, 0.5, 4.0, 9.0, -3.0]).unwrap());
        let loss = tape.reduce_sum(x);
        let grad = tape.backward(loss).unwrap();
        assert_eq!(grad.get("x").unwrap().values(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_half_mean_square_is_x_over_k() {
        let values = vec![1.0, -2.0, 0.5, 4.0];
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::vector(values.clone()));
        let sq = tape.mul(x, x).unwrap();
        let mean = tape.reduce_mean(sq);
        let loss = tape.mul_scalar(mean, 0.5);
        let grad = tape.backward(loss).unwrap();
        let g = grad.get("x").unwrap().values();
        for (gi, xi) in g.iter().zip(&values) {
            assert!(close(*gi, xi / 4.0, 1e-15), "{gi} vs {}", xi / 4.0);
        }
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut tape = Tape::new();
        let _unused = tape.param("w", Tensor::vector(vec![1.0, 2.0]));
        let c = tape.leaf(Tensor::vector(vec![5.0]));
        let loss = tape.reduce_sum(c);
        let grad = tape.backward(loss).unwrap();
        assert_eq!(grad.get("w").unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param("x", Tensor::vector(vec![1.0, 2.0]));
        let err = tape.backward(x).unwrap_err().to_string();
        assert!(err.contains("scalar"), "{err}");
    }

    #[test]
    fn embedding_rejects_out_of_vocab() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::matrix(4, 2, vec![0.0; 8]).unwrap());
        let err = tape.embedding(table, &[1, 4]).unwrap_err();
        assert!(matches!(err, Error::OutOfVocab { id: 4, vocab: 4 }));
    }

    #[test]
    fn forward_replay_is_bitwise_identical() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.param("x", Tensor::matrix(2, 2, vec![0.3, -1.2, 2.2, 0.7]).unwrap());
            let w = tape.param("w", Tensor::matrix(2, 2, vec![1.5, 0.1, -0.4, 0.9]).unwrap());
            let h = tape.matmul(x, w).unwrap();
            let g = tape.gelu(h);
            let n = tape.layer_norm(g, 1e-5);
            let s = tape.softmax(n);
            let loss = tape.reduce_mean(s);
            (tape.value(loss).item(), tape.backward(loss).unwrap())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert!(l1.to_bits() == l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradient() {
        let mut tape = Tape::new();
        let a = tape.param("a", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.param("b", Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap());
        let cat = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).shape(), &[2, 3]);
        assert_eq!(tape.value(cat).values(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let right = tape.slice_cols(cat, 2, 1).unwrap();
        let loss = tape.reduce_sum(right);
        let grad = tape.backward(loss).unwrap();
        assert_eq!(grad.get("a").unwrap().values(), &[0.0; 4]);
        assert_eq!(grad.get("b").unwrap().values(), &[1.0, 1.0]);
    }
}
