//! Record-and-replay reverse-mode differentiation over vectors.
//!
//! A `Tape` records the forward pass as a sequence of nodes; `backward`
//! walks the sequence in reverse and accumulates gradients into the
//! parameter store. Creation order is already a topological order because
//! ops may only reference earlier nodes.

use super::params::{ParamId, ParamStore};
use super::NnError;

pub type NodeId = usize;

/// Activation applied after a dense layer. Gradients are derived from
/// the layer output alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize the reduction; lane order is fixed, so results stay
/// bit-reproducible.
#[inline]
pub fn dot8(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let mut ac = a.chunks_exact(LANES);
    let mut bc = b.chunks_exact(LANES);
    for (aw, bw) in ac.by_ref().zip(bc.by_ref()) {
        for l in 0..LANES {
            acc[l] += aw[l] * bw[l];
        }
    }
    let mut dot =
        ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ac.remainder().iter().zip(bc.remainder()) {
        dot += x * y;
    }
    dot
}

/// `y += a * x` elementwise.
#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}

/// `out = W x + b` for a row-major `[out_dim, in_dim]` weight matrix.
pub fn matvec(w: &[f64], out_dim: usize, in_dim: usize, x: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), in_dim);
    for r in 0..out_dim {
        out[r] = b[r] + dot8(&w[r * in_dim..(r + 1) * in_dim], x);
    }
}

/// Shift-stabilized softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, NnError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteInput);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Shift-stabilized log-softmax.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>, NnError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFiniteInput);
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&v| v - lse).collect())
}

enum Op {
    Input,
    /// Parameter tensor pulled onto the tape as a flat vector.
    Param { id: ParamId },
    Dense {
        w: ParamId,
        b: ParamId,
        x: NodeId,
        act: Activation,
    },
    Slice { x: NodeId, start: usize },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// `scale * x + shift` elementwise.
    Affine { x: NodeId, scale: f64 },
    Exp { x: NodeId },
    Clip { x: NodeId, lo: f64, hi: f64 },
    /// Elementwise minimum; ties route the gradient to `a`.
    Min2 { a: NodeId, b: NodeId },
    /// Scalar sum of squared errors against a constant target.
    SqErrSum { x: NodeId, target: Vec<f64> },
    /// Scalar KL(N(mu, exp(logvar)) || N(0, I)).
    KlStdNormal { mu: NodeId, logvar: NodeId },
    /// Scalar log-probability of one categorical action.
    LogProb {
        logits: NodeId,
        action: usize,
        probs: Vec<f64>,
    },
    /// Scalar entropy of the categorical distribution.
    Entropy { logits: NodeId, probs: Vec<f64> },
    /// Scalar sum of scalar nodes.
    SumMany { xs: Vec<NodeId> },
    /// Scalar sum of one vector node's entries.
    SumVec { x: NodeId },
    /// Dense layer applied to every row of a batch matrix.
    DenseBatch {
        w: ParamId,
        b: ParamId,
        x: NodeId,
        act: Activation,
    },
    /// Column slice of a batch matrix.
    SliceCols { x: NodeId, start: usize, len: usize },
    /// Elementwise `x + c` with a constant vector.
    AddConstVec { x: NodeId },
    /// Elementwise `x * c` with a constant vector.
    MulConstVec { x: NodeId, c: Vec<f64> },
    /// Per-row sum of squared errors against a constant matrix.
    SqErrRows { x: NodeId, target: Vec<f64> },
    /// Per-row KL(N(mu, exp(logvar)) || N(0, I)).
    KlRows { mu: NodeId, logvar: NodeId },
    /// Per-row categorical log-probability of the given actions.
    LogProbRows {
        logits: NodeId,
        actions: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Per-row categorical entropy.
    EntropyRows { logits: NodeId, probs: Vec<f64> },
}

struct Node {
    value: Vec<f64>,
    grad: Vec<f64>,
    /// Batch rows (1 for plain vectors); columns are len / rows.
    rows: usize,
    op: Op,
}

/// The recorded forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.push_rows(value, 1, op)
    }

    fn push_rows(&mut self, value: Vec<f64>, rows: usize, op: Op) -> NodeId {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            value,
            grad,
            rows,
            op,
        });
        self.nodes.len() - 1
    }

    /// Constant leaf (inputs, noise draws, stored states).
    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Constant leaf holding a row-major batch matrix.
    pub fn input_mat(&mut self, value: Vec<f64>, rows: usize) -> NodeId {
        assert!(rows > 0 && value.len() % rows == 0, "ragged input matrix");
        self.push_rows(value, rows, Op::Input)
    }

    /// Puts a parameter tensor on the tape as a flat vector.
    pub fn param(&mut self, ps: &ParamStore, id: ParamId) -> NodeId {
        self.push(ps.get(id).values.clone(), Op::Param { id })
    }

    /// Dense layer `act(W x + b)` with recorded intermediates.
    pub fn dense(
        &mut self,
        ps: &ParamStore,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        act: Activation,
    ) -> Result<NodeId, NnError> {
        let wt = ps.get(w);
        let bt = ps.get(b);
        let (out_dim, in_dim) = (wt.shape[0], wt.shape[1]);
        let xv = &self.nodes[x].value;
        if xv.len() != in_dim {
            return Err(NnError::ShapeMismatch {
                what: "dense input",
                expected: in_dim,
                got: xv.len(),
            });
        }
        if bt.len() != out_dim {
            return Err(NnError::ShapeMismatch {
                what: "dense bias",
                expected: out_dim,
                got: bt.len(),
            });
        }
        let mut out = vec![0.0; out_dim];
        matvec(&wt.values, out_dim, in_dim, xv, &bt.values, &mut out);
        out.iter_mut().for_each(|v| *v = act.apply(*v));
        Ok(self.push(out, Op::Dense { w, b, x, act }))
    }

    /// `x[start..start + len]`.
    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[x].value[start..start + len].to_vec();
        self.push(v, Op::Slice { x, start })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.len() != bv.len() {
            return Err(NnError::ShapeMismatch {
                what: "add",
                expected: av.len(),
                got: bv.len(),
            });
        }
        let rows = self.nodes[a].rows;
        let v = av.iter().zip(bv.iter()).map(|(x, y)| x + y).collect();
        Ok(self.push_rows(v, rows, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.len() != bv.len() {
            return Err(NnError::ShapeMismatch {
                what: "mul",
                expected: av.len(),
                got: bv.len(),
            });
        }
        let rows = self.nodes[a].rows;
        let v = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
        Ok(self.push_rows(v, rows, Op::Mul { a, b }))
    }

    /// `scale * x + shift` elementwise.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> NodeId {
        let rows = self.nodes[x].rows;
        let v = self.nodes[x].value.iter().map(|&t| scale * t + shift).collect();
        self.push_rows(v, rows, Op::Affine { x, scale })
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let rows = self.nodes[x].rows;
        let v = self.nodes[x].value.iter().map(|&t| t.exp()).collect();
        self.push_rows(v, rows, Op::Exp { x })
    }

    /// Clamp with zero gradient outside the open interval.
    pub fn clip(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let rows = self.nodes[x].rows;
        let v = self.nodes[x].value.iter().map(|&t| t.clamp(lo, hi)).collect();
        self.push_rows(v, rows, Op::Clip { x, lo, hi })
    }

    pub fn min2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.len() != bv.len() {
            return Err(NnError::ShapeMismatch {
                what: "min",
                expected: av.len(),
                got: bv.len(),
            });
        }
        let rows = self.nodes[a].rows;
        let v = av.iter().zip(bv.iter()).map(|(x, y)| x.min(*y)).collect();
        Ok(self.push_rows(v, rows, Op::Min2 { a, b }))
    }

    /// Scalar `sum_i (x_i - target_i)^2`.
    pub fn sq_err_sum(&mut self, x: NodeId, target: &[f64]) -> Result<NodeId, NnError> {
        let xv = &self.nodes[x].value;
        if xv.len() != target.len() {
            return Err(NnError::ShapeMismatch {
                what: "sq_err_sum",
                expected: target.len(),
                got: xv.len(),
            });
        }
        let s: f64 = xv.iter().zip(target.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.push(
            vec![s],
            Op::SqErrSum {
                x,
                target: target.to_vec(),
            },
        ))
    }

    /// Scalar KL divergence of N(mu, exp(logvar)) from the unit Gaussian:
    /// `0.5 * sum_i (mu_i^2 + exp(lv_i) - 1 - lv_i)`.
    pub fn kl_std_normal(&mut self, mu: NodeId, logvar: NodeId) -> Result<NodeId, NnError> {
        let (mv, lv) = (&self.nodes[mu].value, &self.nodes[logvar].value);
        if mv.len() != lv.len() {
            return Err(NnError::ShapeMismatch {
                what: "kl",
                expected: mv.len(),
                got: lv.len(),
            });
        }
        if mv.iter().chain(lv.iter()).any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        let s: f64 = mv
            .iter()
            .zip(lv.iter())
            .map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l))
            .sum();
        Ok(self.push(vec![s], Op::KlStdNormal { mu, logvar }))
    }

    /// Scalar log-probability of `action` under softmax(logits).
    pub fn log_prob(&mut self, logits: NodeId, action: usize) -> Result<NodeId, NnError> {
        let lv = &self.nodes[logits].value;
        if action >= lv.len() {
            return Err(NnError::ShapeMismatch {
                what: "log_prob action",
                expected: lv.len(),
                got: action,
            });
        }
        let lp = log_softmax(lv)?;
        let probs = softmax(lv)?;
        let value = lp[action];
        Ok(self.push(vec![value], Op::LogProb { logits, action, probs }))
    }

    /// Scalar entropy of softmax(logits).
    pub fn entropy(&mut self, logits: NodeId) -> Result<NodeId, NnError> {
        let probs = softmax(&self.nodes[logits].value)?;
        let h: f64 = -probs.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>();
        Ok(self.push(vec![h], Op::Entropy { logits, probs }))
    }

    /// Scalar sum of scalar nodes.
    pub fn sum_many(&mut self, xs: &[NodeId]) -> NodeId {
        let s: f64 = xs.iter().map(|&id| self.scalar(id)).sum();
        self.push(vec![s], Op::SumMany { xs: xs.to_vec() })
    }

    /// Scalar sum over one vector node.
    pub fn sum_vec(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].value.iter().sum();
        self.push(vec![s], Op::SumVec { x })
    }

    /// Dense layer applied independently to every row of a batch matrix:
    /// streams each weight row once per minibatch instead of once per
    /// sample.
    pub fn dense_batch(
        &mut self,
        ps: &ParamStore,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        act: Activation,
    ) -> Result<NodeId, NnError> {
        let wt = ps.get(w);
        let bt = ps.get(b);
        let (out_dim, in_dim) = (wt.shape[0], wt.shape[1]);
        let rows = self.nodes[x].rows;
        let xv = &self.nodes[x].value;
        if xv.len() != rows * in_dim {
            return Err(NnError::ShapeMismatch {
                what: "dense_batch input",
                expected: rows * in_dim,
                got: xv.len(),
            });
        }
        if bt.len() != out_dim {
            return Err(NnError::ShapeMismatch {
                what: "dense_batch bias",
                expected: out_dim,
                got: bt.len(),
            });
        }
        let mut out = vec![0.0; rows * out_dim];
        for r in 0..out_dim {
            let wr = &wt.values[r * in_dim..(r + 1) * in_dim];
            let br = bt.values[r];
            for i in 0..rows {
                let xi = &xv[i * in_dim..(i + 1) * in_dim];
                out[i * out_dim + r] = act.apply(br + dot8(wr, xi));
            }
        }
        Ok(self.push_rows(out, rows, Op::DenseBatch { w, b, x, act }))
    }

    /// Columns `[start, start + len)` of every row.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let rows = self.nodes[x].rows;
        let cols = self.nodes[x].value.len() / rows;
        let xv = &self.nodes[x].value;
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&xv[i * cols + start..i * cols + start + len]);
        }
        self.push_rows(out, rows, Op::SliceCols { x, start, len })
    }

    /// Elementwise `x + c` for a constant vector `c`.
    pub fn add_const_vec(&mut self, x: NodeId, c: &[f64]) -> Result<NodeId, NnError> {
        let xv = &self.nodes[x].value;
        if xv.len() != c.len() {
            return Err(NnError::ShapeMismatch {
                what: "add_const_vec",
                expected: xv.len(),
                got: c.len(),
            });
        }
        let rows = self.nodes[x].rows;
        let v = xv.iter().zip(c.iter()).map(|(a, b)| a + b).collect();
        Ok(self.push_rows(v, rows, Op::AddConstVec { x }))
    }

    /// Elementwise `x * c` for a constant vector `c`.
    pub fn mul_const_vec(&mut self, x: NodeId, c: &[f64]) -> Result<NodeId, NnError> {
        let xv = &self.nodes[x].value;
        if xv.len() != c.len() {
            return Err(NnError::ShapeMismatch {
                what: "mul_const_vec",
                expected: xv.len(),
                got: c.len(),
            });
        }
        let rows = self.nodes[x].rows;
        let v = xv.iter().zip(c.iter()).map(|(a, b)| a * b).collect();
        Ok(self.push_rows(
            v,
            rows,
            Op::MulConstVec { x, c: c.to_vec() },
        ))
    }

    /// Per-row sum of squared errors against a constant matrix of the
    /// same shape; returns one value per row.
    pub fn sq_err_rows(&mut self, x: NodeId, target: &[f64]) -> Result<NodeId, NnError> {
        let rows = self.nodes[x].rows;
        let xv = &self.nodes[x].value;
        if xv.len() != target.len() {
            return Err(NnError::ShapeMismatch {
                what: "sq_err_rows",
                expected: xv.len(),
                got: target.len(),
            });
        }
        let cols = xv.len() / rows;
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let s: f64 = xv[i * cols..(i + 1) * cols]
                .iter()
                .zip(&target[i * cols..(i + 1) * cols])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out.push(s);
        }
        Ok(self.push_rows(
            out,
            rows,
            Op::SqErrRows {
                x,
                target: target.to_vec(),
            },
        ))
    }

    /// Per-row KL(N(mu, exp(logvar)) || N(0, I)).
    pub fn kl_rows(&mut self, mu: NodeId, logvar: NodeId) -> Result<NodeId, NnError> {
        let rows = self.nodes[mu].rows;
        let (mv, lv) = (&self.nodes[mu].value, &self.nodes[logvar].value);
        if mv.len() != lv.len() {
            return Err(NnError::ShapeMismatch {
                what: "kl_rows",
                expected: mv.len(),
                got: lv.len(),
            });
        }
        if mv.iter().chain(lv.iter()).any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        let cols = mv.len() / rows;
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let s: f64 = mv[i * cols..(i + 1) * cols]
                .iter()
                .zip(&lv[i * cols..(i + 1) * cols])
                .map(|(m, l)| 0.5 * (m * m + l.exp() - 1.0 - l))
                .sum();
            out.push(s);
        }
        Ok(self.push_rows(out, rows, Op::KlRows { mu, logvar }))
    }

    /// Per-row log-probability of each row's action under its softmax.
    pub fn log_prob_rows(&mut self, logits: NodeId, actions: &[usize]) -> Result<NodeId, NnError> {
        let rows = self.nodes[logits].rows;
        if actions.len() != rows {
            return Err(NnError::ShapeMismatch {
                what: "log_prob_rows actions",
                expected: rows,
                got: actions.len(),
            });
        }
        let lv = &self.nodes[logits].value;
        let cols = lv.len() / rows;
        let mut probs = Vec::with_capacity(lv.len());
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = &lv[i * cols..(i + 1) * cols];
            if actions[i] >= cols {
                return Err(NnError::ShapeMismatch {
                    what: "log_prob_rows action id",
                    expected: cols,
                    got: actions[i],
                });
            }
            out.push(log_softmax(row)?[actions[i]]);
            probs.extend(softmax(row)?);
        }
        Ok(self.push_rows(
            out,
            rows,
            Op::LogProbRows {
                logits,
                actions: actions.to_vec(),
                probs,
            },
        ))
    }

    /// Per-row entropy of each row's softmax.
    pub fn entropy_rows(&mut self, logits: NodeId) -> Result<NodeId, NnError> {
        let rows = self.nodes[logits].rows;
        let lv = &self.nodes[logits].value;
        let cols = lv.len() / rows;
        let mut probs = Vec::with_capacity(lv.len());
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let p = softmax(&lv[i * cols..(i + 1) * cols])?;
            let h: f64 = -p
                .iter()
                .map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 })
                .sum::<f64>();
            out.push(h);
            probs.extend(p);
        }
        Ok(self.push_rows(out, rows, Op::EntropyRows { logits, probs }))
    }

    /// Backpropagates from a scalar loss node, accumulating parameter
    /// gradients into `ps`.
    pub fn backward(&mut self, loss: NodeId, ps: &mut ParamStore) -> Result<(), NnError> {
        if self.nodes.is_empty() || loss >= self.nodes.len() {
            return Err(NnError::NoRecordedForward);
        }
        if self.nodes[loss].value.len() != 1 {
            return Err(NnError::ShapeMismatch {
                what: "loss node",
                expected: 1,
                got: self.nodes[loss].value.len(),
            });
        }
        if !self.nodes[loss].value[0].is_finite() {
            return Err(NnError::NonFiniteLoss);
        }
        self.nodes[loss].grad[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param { id } => {
                    let grad = &mut ps.get_mut(*id).grad;
                    for (g, ng) in grad.iter_mut().zip(node.grad.iter()) {
                        *g += ng;
                    }
                }
                Op::Dense { w, b, x, act } => {
                    let in_dim = ps.get(*w).shape[1];
                    let out_dim = ps.get(*w).shape[0];
                    // delta = upstream * act'(y)
                    let delta: Vec<f64> = node
                        .grad
                        .iter()
                        .zip(node.value.iter())
                        .map(|(g, y)| g * act.grad_from_output(*y))
                        .collect();
                    {
                        let bg = &mut ps.get_mut(*b).grad;
                        for (g, d) in bg.iter_mut().zip(delta.iter()) {
                            *g += d;
                        }
                    }
                    let xv = &before[*x].value;
                    {
                        let wg = &mut ps.get_mut(*w).grad;
                        for r in 0..out_dim {
                            let d = delta[r];
                            if d == 0.0 {
                                continue;
                            }
                            let row = &mut wg[r * in_dim..(r + 1) * in_dim];
                            for (g, xc) in row.iter_mut().zip(xv.iter()) {
                                *g += d * xc;
                            }
                        }
                    }
                    let wv = &ps.get(*w).values;
                    let xg = &mut before[*x].grad;
                    for r in 0..out_dim {
                        let d = delta[r];
                        if d == 0.0 {
                            continue;
                        }
                        let row = &wv[r * in_dim..(r + 1) * in_dim];
                        for (g, wc) in xg.iter_mut().zip(row.iter()) {
                            *g += d * wc;
                        }
                    }
                }
                Op::Slice { x, start } => {
                    let xg = &mut before[*x].grad;
                    for (k, g) in node.grad.iter().enumerate() {
                        xg[start + k] += g;
                    }
                }
                Op::Add { a, b } => {
                    if a == b {
                        let ag = &mut before[*a].grad;
                        for (g, ng) in ag.iter_mut().zip(node.grad.iter()) {
                            *g += 2.0 * ng;
                        }
                    } else {
                        for &src in [a, b].iter() {
                            let sg = &mut before[*src].grad;
                            for (g, ng) in sg.iter_mut().zip(node.grad.iter()) {
                                *g += ng;
                            }
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let (ai, bi) = (*a, *b);
                    if ai == bi {
                        let av = before[ai].value.clone();
                        let ag = &mut before[ai].grad;
                        for ((g, ng), v) in ag.iter_mut().zip(node.grad.iter()).zip(av.iter()) {
                            *g += 2.0 * ng * v;
                        }
                    } else {
                        let (lo, hi) = if ai < bi { (ai, bi) } else { (bi, ai) };
                        let (left, right) = before.split_at_mut(hi);
                        let (lo_node, hi_node) = (&mut left[lo], &mut right[0]);
                        let (a_node, b_node) = if ai < bi {
                            (lo_node, hi_node)
                        } else {
                            (hi_node, lo_node)
                        };
                        for k in 0..node.grad.len() {
                            a_node.grad[k] += node.grad[k] * b_node.value[k];
                            b_node.grad[k] += node.grad[k] * a_node.value[k];
                        }
                    }
                }
                Op::Affine { x, scale } => {
                    let xg = &mut before[*x].grad;
                    for (g, ng) in xg.iter_mut().zip(node.grad.iter()) {
                        *g += scale * ng;
                    }
                }
                Op::Exp { x } => {
                    let xg = &mut before[*x].grad;
                    for ((g, ng), y) in xg.iter_mut().zip(node.grad.iter()).zip(node.value.iter()) {
                        *g += ng * y;
                    }
                }
                Op::Clip { x, lo, hi } => {
                    let xv = &before[*x].value;
                    let pass: Vec<bool> = xv.iter().map(|&v| v > *lo && v < *hi).collect();
                    let xg = &mut before[*x].grad;
                    for (k, g) in xg.iter_mut().enumerate() {
                        if pass[k] {
                            *g += node.grad[k];
                        }
                    }
                }
                Op::Min2 { a, b } => {
                    let (ai, bi) = (*a, *b);
                    if ai == bi {
                        let ag = &mut before[ai].grad;
                        for (g, ng) in ag.iter_mut().zip(node.grad.iter()) {
                            *g += ng;
                        }
                    } else {
                        for k in 0..node.grad.len() {
                            // Ties route to `a`.
                            if before[ai].value[k] <= before[bi].value[k] {
                                before[ai].grad[k] += node.grad[k];
                            } else {
                                before[bi].grad[k] += node.grad[k];
                            }
                        }
                    }
                }
                Op::SqErrSum { x, target } => {
                    let g = node.grad[0];
                    let xv = before[*x].value.clone();
                    let xg = &mut before[*x].grad;
                    for ((xg, xv), t) in xg.iter_mut().zip(xv.iter()).zip(target.iter()) {
                        *xg += g * 2.0 * (xv - t);
                    }
                }
                Op::KlStdNormal { mu, logvar } => {
                    let g = node.grad[0];
                    {
                        let mv = before[*mu].value.clone();
                        let mg = &mut before[*mu].grad;
                        for (mg, m) in mg.iter_mut().zip(mv.iter()) {
                            *mg += g * m;
                        }
                    }
                    {
                        let lv = before[*logvar].value.clone();
                        let lg = &mut before[*logvar].grad;
                        for (lg, l) in lg.iter_mut().zip(lv.iter()) {
                            *lg += g * 0.5 * (l.exp() - 1.0);
                        }
                    }
                }
                Op::LogProb { logits, action, probs } => {
                    let g = node.grad[0];
                    let lg = &mut before[*logits].grad;
                    for (j, p) in probs.iter().enumerate() {
                        let ind = if j == *action { 1.0 } else { 0.0 };
                        lg[j] += g * (ind - p);
                    }
                }
                Op::Entropy { logits, probs } => {
                    let g = node.grad[0];
                    let h = node.value[0];
                    let lg = &mut before[*logits].grad;
                    for (j, p) in probs.iter().enumerate() {
                        // dH/dl_j = -p_j (ln p_j + H)
                        lg[j] += g * (-p * (p.ln() + h));
                    }
                }
                Op::SumMany { xs } => {
                    let g = node.grad[0];
                    for &x in xs {
                        before[x].grad[0] += g;
                    }
                }
                Op::SumVec { x } => {
                    let g = node.grad[0];
                    let xg = &mut before[*x].grad;
                    xg.iter_mut().for_each(|v| *v += g);
                }
                Op::DenseBatch { w, b, x, act } => {
                    let in_dim = ps.get(*w).shape[1];
                    let out_dim = ps.get(*w).shape[0];
                    let rows = node.rows;
                    // delta = upstream * act'(y), row-major rows x out.
                    let delta: Vec<f64> = node
                        .grad
                        .iter()
                        .zip(node.value.iter())
                        .map(|(g, y)| g * act.grad_from_output(*y))
                        .collect();
                    {
                        let bg = &mut ps.get_mut(*b).grad;
                        for i in 0..rows {
                            for (g, d) in bg.iter_mut().zip(&delta[i * out_dim..(i + 1) * out_dim])
                            {
                                *g += d;
                            }
                        }
                    }
                    let xv = &before[*x].value;
                    {
                        // dW[r] += sum_i delta[i][r] * X[i]; each weight
                        // row stays hot while samples stream past.
                        let wg = &mut ps.get_mut(*w).grad;
                        for r in 0..out_dim {
                            let wgr = &mut wg[r * in_dim..(r + 1) * in_dim];
                            for i in 0..rows {
                                let d = delta[i * out_dim + r];
                                if d != 0.0 {
                                    axpy(d, &xv[i * in_dim..(i + 1) * in_dim], wgr);
                                }
                            }
                        }
                    }
                    let wv = &ps.get(*w).values;
                    let xg = &mut before[*x].grad;
                    for r in 0..out_dim {
                        let wr = &wv[r * in_dim..(r + 1) * in_dim];
                        for i in 0..rows {
                            let d = delta[i * out_dim + r];
                            if d != 0.0 {
                                axpy(d, wr, &mut xg[i * in_dim..(i + 1) * in_dim]);
                            }
                        }
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let rows = node.rows;
                    let cols = before[*x].value.len() / rows;
                    let xg = &mut before[*x].grad;
                    for i in 0..rows {
                        for k in 0..*len {
                            xg[i * cols + start + k] += node.grad[i * len + k];
                        }
                    }
                }
                Op::AddConstVec { x } => {
                    let xg = &mut before[*x].grad;
                    for (g, ng) in xg.iter_mut().zip(node.grad.iter()) {
                        *g += ng;
                    }
                }
                Op::MulConstVec { x, c } => {
                    let xg = &mut before[*x].grad;
                    for ((g, ng), cv) in xg.iter_mut().zip(node.grad.iter()).zip(c.iter()) {
                        *g += ng * cv;
                    }
                }
                Op::SqErrRows { x, target } => {
                    let rows = node.rows;
                    let cols = before[*x].value.len() / rows;
                    let xv = before[*x].value.clone();
                    let xg = &mut before[*x].grad;
                    for i in 0..rows {
                        let g = node.grad[i];
                        if g == 0.0 {
                            continue;
                        }
                        for k in 0..cols {
                            let idx = i * cols + k;
                            xg[idx] += g * 2.0 * (xv[idx] - target[idx]);
                        }
                    }
                }
                Op::KlRows { mu, logvar } => {
                    let rows = node.rows;
                    let cols = before[*mu].value.len() / rows;
                    {
                        let mv = before[*mu].value.clone();
                        let mg = &mut before[*mu].grad;
                        for i in 0..rows {
                            let g = node.grad[i];
                            for k in 0..cols {
                                mg[i * cols + k] += g * mv[i * cols + k];
                            }
                        }
                    }
                    {
                        let lv = before[*logvar].value.clone();
                        let lg = &mut before[*logvar].grad;
                        for i in 0..rows {
                            let g = node.grad[i];
                            for k in 0..cols {
                                lg[i * cols + k] += g * 0.5 * (lv[i * cols + k].exp() - 1.0);
                            }
                        }
                    }
                }
                Op::LogProbRows {
                    logits,
                    actions,
                    probs,
                } => {
                    let rows = node.rows;
                    let cols = before[*logits].value.len() / rows;
                    let lg = &mut before[*logits].grad;
                    for i in 0..rows {
                        let g = node.grad[i];
                        if g == 0.0 {
                            continue;
                        }
                        for j in 0..cols {
                            let ind = if j == actions[i] { 1.0 } else { 0.0 };
                            lg[i * cols + j] += g * (ind - probs[i * cols + j]);
                        }
                    }
                }
                Op::EntropyRows { logits, probs } => {
                    let rows = node.rows;
                    let cols = before[*logits].value.len() / rows;
                    let lg = &mut before[*logits].grad;
                    for i in 0..rows {
                        let g = node.grad[i];
                        if g == 0.0 {
                            continue;
                        }
                        let h = node.value[i];
                        for j in 0..cols {
                            let p = probs[i * cols + j];
                            lg[i * cols + j] += g * (-p * (p.ln() + h));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
