//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every forward operation appends a node to a [`Tape`] and returns a
//! [`TensorId`] indexing it. Inputs of a node always precede it on the tape,
//! so [`Tape::backward`] is a single reverse sweep over node indices — exact
//! reverse topological order by construction. Values are `f64` throughout;
//! convolutional ops live in `conv`, box-coordinate ops (delta decoding,
//! clipping, bilinear region sampling) in `sample`, finite-difference
//! checking in `gradcheck`.

mod conv;
mod sample;

pub mod gradcheck;

pub use gradcheck::{grad_check, relative_error};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Index of a node on one [`Tape`]. Ids are only meaningful for the tape
/// that issued them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

impl std::fmt::Display for TensorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// A dense row-major value: shape plus flat data. Scalars use shape `[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Self {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// Uniform(-a, a) init with a = sqrt(6 / (fan_in + fan_out)).
    pub fn xavier_uniform(
        shape: impl Into<Vec<usize>>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let shape = shape.into();
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.random::<f64>() * 2.0 * a - a).collect();
        Tensor { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }
}

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape { op: &'static str, expected: String, got: Vec<usize> },
    #[error("{op}: needs at least one element")]
    EmptyInput { op: &'static str },
    #[error("{op}: index {index} out of bounds for {len} elements")]
    IndexOutOfBounds { op: &'static str, index: usize, len: usize },
    #[error("backward target must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("tensor id {id} does not belong to this tape (len {len})")]
    UnknownId { id: TensorId, len: usize },
    #[error("{op}: dropout rate {rate} outside [0, 1)")]
    BadRate { op: &'static str, rate: f64 },
    #[error("{op}: box has non-positive extent w={w} h={h}")]
    DegenerateBox { op: &'static str, w: f64, h: f64 },
}

/// Activation selector for [`Tape::activation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Tanh,
}

/// Whether dropout draws a fresh mask or passes values through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

#[derive(Debug, Default)]
enum Op {
    #[default]
    Leaf,
    AddN { inputs: Vec<TensorId> },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: f64 },
    Sum { x: TensorId },
    Mean { x: TensorId },
    Reshape { x: TensorId },
    Linear { w: TensorId, x: TensorId, b: Option<TensorId> },
    Relu { x: TensorId },
    Sigmoid { x: TensorId },
    Tanh { x: TensorId },
    Softmax { x: TensorId },
    Dropout { x: TensorId, mask: Vec<f64> },
    Gather { x: TensorId, idx: Vec<usize> },
    Conv2d { x: TensorId, k: TensorId, b: TensorId },
    Conv1x1 { x: TensorId, k: TensorId, b: TensorId },
    MaxPool2x2 { x: TensorId, argmax: Vec<usize> },
    GlobalAvgPool { x: TensorId },
    SquaredErrorTo { x: TensorId, target: Vec<f64> },
    SmoothL1To { x: TensorId, target: Vec<f64> },
    BceOnProbs { x: TensorId, target: Vec<f64> },
    LogisticOnLogits { x: TensorId, target: Vec<f64> },
    MaxOverFirstL { inputs: Vec<TensorId>, winners: Vec<usize> },
    DecodeBox { deltas: TensorId, anchor: [f64; 4], clamp: f64 },
    ClipBox { input: TensorId, img_w: f64, img_h: f64, min_size: f64 },
    Bilinear { feat: TensorId, boxv: TensorId, stride: f64 },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    tracked: bool,
    op: Op,
}

/// The recording tape. One tape per forward pass is the intended pattern:
/// lease parameters in as tracked leaves, build the graph, call
/// [`Tape::backward`] on a scalar loss, then read gradients back out.
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

    /// Append a leaf. `tracked` marks it as a gradient target.
    pub fn leaf(&mut self, value: Tensor, tracked: bool) -> TensorId {
        self.push(value, tracked, Op::Leaf)
    }

    /// Append an untracked leaf (no gradient ever flows into it).
    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a node, if backward has reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Drop all accumulated gradients, keeping values and structure.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, tracked: bool, op: Op) -> TensorId {
        self.nodes.push(Node { value, grad: None, tracked, op });
        TensorId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: TensorId) -> Result<(), TapeError> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TapeError::UnknownId { id, len: self.nodes.len() })
        }
    }

    fn tracked(&self, id: TensorId) -> bool {
        self.nodes[id.0].tracked
    }

    fn data(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value.data
    }

    /// Shape of a node's value.
    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    // ---- elementwise and reduction ops ----

    /// Elementwise sum of two or more same-shaped tensors.
    pub fn add_n(&mut self, inputs: &[TensorId]) -> Result<TensorId, TapeError> {
        if inputs.is_empty() {
            return Err(TapeError::EmptyInput { op: "add_n" });
        }
        for &id in inputs {
            self.check_id(id)?;
        }
        let shape = self.shape(inputs[0]).to_vec();
        for &id in &inputs[1..] {
            if self.shape(id) != shape.as_slice() {
                return Err(TapeError::ShapeMismatch {
                    op: "add_n",
                    lhs: shape,
                    rhs: self.shape(id).to_vec(),
                });
            }
        }
        let mut data = self.data(inputs[0]).to_vec();
        for &id in &inputs[1..] {
            for (d, s) in data.iter_mut().zip(self.data(id)) {
                *d += s;
            }
        }
        let tracked = inputs.iter().any(|&id| self.tracked(id));
        Ok(self.push(
            Tensor { shape, data },
            tracked,
            Op::AddN { inputs: inputs.to_vec() },
        ))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        self.add_n(&[a, b])
    }

    /// Hadamard (elementwise) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(a)?;
        self.check_id(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(TapeError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let data: Vec<f64> =
            self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor { shape, data }, tracked, Op::Mul { a, b }))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let data: Vec<f64> = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor { shape, data }, tracked, Op::Scale { x, c }))
    }

    pub fn sum(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let s: f64 = self.data(x).iter().sum();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::scalar(s), tracked, Op::Sum { x }))
    }

    pub fn mean(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let n = self.value(x).numel();
        if n == 0 {
            return Err(TapeError::EmptyInput { op: "mean" });
        }
        let s: f64 = self.data(x).iter().sum::<f64>() / n as f64;
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::scalar(s), tracked, Op::Mean { x }))
    }

    /// Reinterpret `x` with a new shape of the same element count. The data
    /// is row-major either way, so this moves no values.
    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let n = self.value(x).numel();
        if shape.iter().product::<usize>() != n {
            return Err(TapeError::BadShape {
                op: "reshape",
                expected: format!("shape with {n} elements"),
                got: shape,
            });
        }
        let data = self.data(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::from_vec(shape, data), tracked, Op::Reshape { x }))
    }

    /// Flatten `x` to a rank-1 vector.
    pub fn flatten(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        let n = self.value(x).numel();
        self.reshape(x, vec![n])
    }

    // ---- linear algebra ----

    /// `w[out, in] · x[in] + b[out]`. The bias is optional.
    pub fn linear(
        &mut self,
        w: TensorId,
        x: TensorId,
        b: Option<TensorId>,
    ) -> Result<TensorId, TapeError> {
        self.check_id(w)?;
        self.check_id(x)?;
        let ws = self.shape(w);
        if ws.len() != 2 {
            return Err(TapeError::BadShape {
                op: "linear",
                expected: "rank-2 weight [out, in]".into(),
                got: ws.to_vec(),
            });
        }
        let (out_dim, in_dim) = (ws[0], ws[1]);
        if self.shape(x) != [in_dim] {
            return Err(TapeError::ShapeMismatch {
                op: "linear",
                lhs: ws.to_vec(),
                rhs: self.shape(x).to_vec(),
            });
        }
        if let Some(b) = b {
            self.check_id(b)?;
            if self.shape(b) != [out_dim] {
                return Err(TapeError::ShapeMismatch {
                    op: "linear",
                    lhs: vec![out_dim],
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let wd = self.data(w);
        let xd = self.data(x);
        let mut data = match b {
            Some(b) => self.data(b).to_vec(),
            None => vec![0.0; out_dim],
        };
        for o in 0..out_dim {
            let row = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(xd) {
                acc += wv * xv;
            }
            data[o] += acc;
        }
        let tracked =
            self.tracked(w) || self.tracked(x) || b.is_some_and(|b| self.tracked(b));
        Ok(self.push(Tensor::from_vec(vec![out_dim], data), tracked, Op::Linear { w, x, b }))
    }

    // ---- activations ----

    pub fn activation(
        &mut self,
        x: TensorId,
        kind: ActivationKind,
    ) -> Result<TensorId, TapeError> {
        match kind {
            ActivationKind::Relu => self.relu(x),
            ActivationKind::Sigmoid => self.sigmoid(x),
            ActivationKind::Tanh => self.tanh(x),
        }
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor { shape, data }, tracked, Op::Relu { x }))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let data: Vec<f64> = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor { shape, data }, tracked, Op::Sigmoid { x }))
    }

    pub fn tanh(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let data: Vec<f64> = self.data(x).iter().map(|&v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor { shape, data }, tracked, Op::Tanh { x }))
    }

    /// Numerically stable softmax over a 1-D vector.
    pub fn softmax(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let xs = self.shape(x);
        if xs.len() != 1 || xs[0] == 0 {
            return Err(TapeError::BadShape {
                op: "softmax",
                expected: "non-empty rank-1 vector".into(),
                got: xs.to_vec(),
            });
        }
        let xd = self.data(x);
        let m = xd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xd.iter().map(|&v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        let data: Vec<f64> = exps.iter().map(|e| e / total).collect();
        let shape = xs.to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor { shape, data }, tracked, Op::Softmax { x }))
    }

    /// Inverted dropout: in train mode, zero each element with probability
    /// `rate` and scale survivors by 1/(1-rate) so expectations match eval
    /// mode. Eval mode is the identity and appends nothing to the tape.
    pub fn dropout(
        &mut self,
        x: TensorId,
        rate: f64,
        mode: DropoutMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        if !(0.0..1.0).contains(&rate) {
            return Err(TapeError::BadRate { op: "dropout", rate });
        }
        if mode == DropoutMode::Eval {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data: Vec<f64> =
            self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor { shape, data }, tracked, Op::Dropout { x, mask }))
    }

    /// Pick elements of the flattened input: `out[i] = x[idx[i]]`.
    pub fn gather(&mut self, x: TensorId, idx: &[usize]) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let n = self.value(x).numel();
        for &i in idx {
            if i >= n {
                return Err(TapeError::IndexOutOfBounds { op: "gather", index: i, len: n });
            }
        }
        let xd = self.data(x);
        let data: Vec<f64> = idx.iter().map(|&i| xd[i]).collect();
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::from_vec(vec![idx.len()], data),
            tracked,
            Op::Gather { x, idx: idx.to_vec() },
        ))
    }

    // ---- scalar loss heads ----

    /// `sum_i (x_i - t_i)^2`.
    pub fn squared_error_to(
        &mut self,
        x: TensorId,
        target: &[f64],
    ) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        self.want_target_len("squared_error_to", x, target.len())?;
        let s: f64 = self
            .data(x)
            .iter()
            .zip(target)
            .map(|(v, t)| (v - t) * (v - t))
            .sum();
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::scalar(s),
            tracked,
            Op::SquaredErrorTo { x, target: target.to_vec() },
        ))
    }

    /// `sum_i smooth_l1(x_i - t_i)` with the usual 0.5·d² / |d|-0.5 split at
    /// |d| = 1.
    pub fn smooth_l1_to(
        &mut self,
        x: TensorId,
        target: &[f64],
    ) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        self.want_target_len("smooth_l1_to", x, target.len())?;
        let s: f64 = self
            .data(x)
            .iter()
            .zip(target)
            .map(|(v, t)| crate::localizer::smooth_l1(v - t))
            .sum();
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::scalar(s),
            tracked,
            Op::SmoothL1To { x, target: target.to_vec() },
        ))
    }

    /// Mean binary cross-entropy where `x` already holds probabilities.
    /// Probabilities are clamped to [1e-7, 1-1e-7] before the logs.
    pub fn bce_on_probs(
        &mut self,
        x: TensorId,
        target: &[f64],
    ) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        self.want_target_len("bce_on_probs", x, target.len())?;
        let n = target.len();
        if n == 0 {
            return Err(TapeError::EmptyInput { op: "bce_on_probs" });
        }
        let mut s = 0.0;
        for (&p, &t) in self.data(x).iter().zip(target) {
            let c = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            s -= t * c.ln() + (1.0 - t) * (1.0 - c).ln();
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::scalar(s / n as f64),
            tracked,
            Op::BceOnProbs { x, target: target.to_vec() },
        ))
    }

    /// Mean binary logistic loss on raw logits, computed in the stable
    /// `max(z,0) - z·t + ln(1 + e^{-|z|})` form.
    pub fn logistic_on_logits(
        &mut self,
        x: TensorId,
        target: &[f64],
    ) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        self.want_target_len("logistic_on_logits", x, target.len())?;
        let n = target.len();
        if n == 0 {
            return Err(TapeError::EmptyInput { op: "logistic_on_logits" });
        }
        let mut s = 0.0;
        for (&z, &t) in self.data(x).iter().zip(target) {
            s += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::scalar(s / n as f64),
            tracked,
            Op::LogisticOnLogits { x, target: target.to_vec() },
        ))
    }

    /// Coordinate-wise max over a set of equal-length vectors, truncated to
    /// the first `l` coordinates. Gradient routes to the earliest input that
    /// attains the max (ties break toward the lowest input position).
    pub fn max_over_first_l(
        &mut self,
        inputs: &[TensorId],
        l: usize,
    ) -> Result<TensorId, TapeError> {
        if inputs.is_empty() {
            return Err(TapeError::EmptyInput { op: "max_over_first_l" });
        }
        for &id in inputs {
            self.check_id(id)?;
            let s = self.shape(id);
            if s.len() != 1 || s[0] < l {
                return Err(TapeError::BadShape {
                    op: "max_over_first_l",
                    expected: format!("rank-1 vector of length >= {l}"),
                    got: s.to_vec(),
                });
            }
        }
        let mut data = vec![f64::NEG_INFINITY; l];
        let mut winners = vec![0usize; l];
        for (pos, &id) in inputs.iter().enumerate() {
            let d = self.data(id);
            for j in 0..l {
                if d[j] > data[j] {
                    data[j] = d[j];
                    winners[j] = pos;
                }
            }
        }
        let tracked = inputs.iter().any(|&id| self.tracked(id));
        Ok(self.push(
            Tensor::from_vec(vec![l], data),
            tracked,
            Op::MaxOverFirstL { inputs: inputs.to_vec(), winners },
        ))
    }

    fn want_target_len(
        &self,
        op: &'static str,
        x: TensorId,
        len: usize,
    ) -> Result<(), TapeError> {
        if self.value(x).numel() != len {
            return Err(TapeError::ShapeMismatch {
                op,
                lhs: self.shape(x).to_vec(),
                rhs: vec![len],
            });
        }
        Ok(())
    }

    // ---- backward ----

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// into every tracked node reached, so calling backward twice without
    /// [`Tape::reset_grads`] doubles leaf gradients.
    pub fn backward(&mut self, loss: TensorId) -> Result<(), TapeError> {
        self.check_id(loss)?;
        if self.value(loss).numel() != 1 {
            return Err(TapeError::NotScalar { shape: self.shape(loss).to_vec() });
        }
        // Per-call flow buffer keeps repeated backward calls independent:
        // persistent node grads only ever receive folded-in totals.
        let mut flow: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        flow[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = flow[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            let len = self.nodes[i].value.data.len();
            let slot = self.nodes[i].grad.get_or_insert_with(|| vec![0.0; len]);
            for (acc, gv) in slot.iter_mut().zip(&g) {
                *acc += gv;
            }
            let op = std::mem::take(&mut self.nodes[i].op);
            self.distribute(&op, i, &g, &mut flow);
            self.nodes[i].op = op;
        }
        Ok(())
    }

    /// Add `contrib` into the flow slot of `id` if that node is tracked.
    fn bump(&self, flow: &mut [Option<Vec<f64>>], id: TensorId, contrib: &[f64]) {
        if !self.tracked(id) {
            return;
        }
        let slot = flow[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.data.len()]);
        for (acc, c) in slot.iter_mut().zip(contrib) {
            *acc += c;
        }
    }

    fn distribute(
        &self,
        op: &Op,
        out: usize,
        g: &[f64],
        flow: &mut [Option<Vec<f64>>],
    ) {
        match *op {
            Op::Leaf => {}
            Op::AddN { ref inputs } => {
                for &id in inputs {
                    self.bump(flow, id, g);
                }
            }
            Op::Mul { a, b } => {
                if self.tracked(a) {
                    let contrib: Vec<f64> =
                        self.data(b).iter().zip(g).map(|(v, gv)| v * gv).collect();
                    self.bump(flow, a, &contrib);
                }
                if self.tracked(b) {
                    let contrib: Vec<f64> =
                        self.data(a).iter().zip(g).map(|(v, gv)| v * gv).collect();
                    self.bump(flow, b, &contrib);
                }
            }
            Op::Scale { x, c } => {
                if self.tracked(x) {
                    let contrib: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::Sum { x } => {
                if self.tracked(x) {
                    let contrib = vec![g[0]; self.nodes[x.0].value.data.len()];
                    self.bump(flow, x, &contrib);
                }
            }
            Op::Mean { x } => {
                if self.tracked(x) {
                    let n = self.nodes[x.0].value.data.len();
                    let contrib = vec![g[0] / n as f64; n];
                    self.bump(flow, x, &contrib);
                }
            }
            Op::Reshape { x } => self.bump(flow, x, g),
            Op::Linear { w, x, b } => {
                let in_dim = self.shape(w)[1];
                let out_dim = self.shape(w)[0];
                if self.tracked(w) {
                    let xd = self.data(x);
                    let mut dw = vec![0.0; out_dim * in_dim];
                    for o in 0..out_dim {
                        let go = g[o];
                        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
                        for (d, xv) in row.iter_mut().zip(xd) {
                            *d += go * xv;
                        }
                    }
                    self.bump(flow, w, &dw);
                }
                if self.tracked(x) {
                    let wd = self.data(w);
                    let mut dx = vec![0.0; in_dim];
                    for o in 0..out_dim {
                        let go = g[o];
                        let row = &wd[o * in_dim..(o + 1) * in_dim];
                        for (d, wv) in dx.iter_mut().zip(row) {
                            *d += go * wv;
                        }
                    }
                    self.bump(flow, x, &dx);
                }
                if let Some(b) = b {
                    self.bump(flow, b, g);
                }
            }
            Op::Relu { x } => {
                if self.tracked(x) {
                    let y = &self.nodes[out].value.data;
                    let contrib: Vec<f64> = y
                        .iter()
                        .zip(g)
                        .map(|(&yv, gv)| if yv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::Sigmoid { x } => {
                if self.tracked(x) {
                    let y = &self.nodes[out].value.data;
                    let contrib: Vec<f64> =
                        y.iter().zip(g).map(|(&yv, gv)| gv * yv * (1.0 - yv)).collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::Tanh { x } => {
                if self.tracked(x) {
                    let y = &self.nodes[out].value.data;
                    let contrib: Vec<f64> =
                        y.iter().zip(g).map(|(&yv, gv)| gv * (1.0 - yv * yv)).collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::Softmax { x } => {
                if self.tracked(x) {
                    let y = &self.nodes[out].value.data;
                    let dot: f64 = y.iter().zip(g).map(|(yv, gv)| yv * gv).sum();
                    let contrib: Vec<f64> =
                        y.iter().zip(g).map(|(&yv, gv)| yv * (gv - dot)).collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::Dropout { x, ref mask } => {
                if self.tracked(x) {
                    let contrib: Vec<f64> =
                        mask.iter().zip(g).map(|(m, gv)| m * gv).collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::Gather { x, ref idx } => {
                if self.tracked(x) {
                    let mut dx = vec![0.0; self.nodes[x.0].value.data.len()];
                    for (pos, &i) in idx.iter().enumerate() {
                        dx[i] += g[pos];
                    }
                    self.bump(flow, x, &dx);
                }
            }
            Op::Conv2d { x, k, b } => conv::backward_conv2d(self, x, k, b, g, flow),
            Op::Conv1x1 { x, k, b } => conv::backward_conv1x1(self, x, k, b, g, flow),
            Op::MaxPool2x2 { x, ref argmax } => {
                if self.tracked(x) {
                    let mut dx = vec![0.0; self.nodes[x.0].value.data.len()];
                    for (pos, &i) in argmax.iter().enumerate() {
                        dx[i] += g[pos];
                    }
                    self.bump(flow, x, &dx);
                }
            }
            Op::GlobalAvgPool { x } => {
                if self.tracked(x) {
                    let s = self.shape(x);
                    let (c, hw) = (s[0], s[1] * s[2]);
                    let mut dx = vec![0.0; c * hw];
                    for ch in 0..c {
                        let gv = g[ch] / hw as f64;
                        for d in &mut dx[ch * hw..(ch + 1) * hw] {
                            *d += gv;
                        }
                    }
                    self.bump(flow, x, &dx);
                }
            }
            Op::SquaredErrorTo { x, ref target } => {
                if self.tracked(x) {
                    let contrib: Vec<f64> = self
                        .data(x)
                        .iter()
                        .zip(target)
                        .map(|(v, t)| 2.0 * (v - t) * g[0])
                        .collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::SmoothL1To { x, ref target } => {
                if self.tracked(x) {
                    let contrib: Vec<f64> = self
                        .data(x)
                        .iter()
                        .zip(target)
                        .map(|(v, t)| {
                            let d = v - t;
                            let slope = if d.abs() < 1.0 { d } else { d.signum() };
                            slope * g[0]
                        })
                        .collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::BceOnProbs { x, ref target } => {
                if self.tracked(x) {
                    let n = target.len() as f64;
                    let contrib: Vec<f64> = self
                        .data(x)
                        .iter()
                        .zip(target)
                        .map(|(&p, &t)| {
                            if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                                0.0 // flat region of the clamp
                            } else {
                                (-t / p + (1.0 - t) / (1.0 - p)) * g[0] / n
                            }
                        })
                        .collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::LogisticOnLogits { x, ref target } => {
                if self.tracked(x) {
                    let n = target.len() as f64;
                    let contrib: Vec<f64> = self
                        .data(x)
                        .iter()
                        .zip(target)
                        .map(|(&z, &t)| (sigmoid(z) - t) * g[0] / n)
                        .collect();
                    self.bump(flow, x, &contrib);
                }
            }
            Op::MaxOverFirstL { ref inputs, ref winners } => {
                for (pos, &id) in inputs.iter().enumerate() {
                    if !self.tracked(id) {
                        continue;
                    }
                    let len = self.nodes[id.0].value.data.len();
                    let mut dx = vec![0.0; len];
                    let mut any = false;
                    for (j, &w) in winners.iter().enumerate() {
                        if w == pos {
                            dx[j] += g[j];
                            any = true;
                        }
                    }
                    if any {
                        self.bump(flow, id, &dx);
                    }
                }
            }
            Op::DecodeBox { deltas, anchor, clamp } => {
                sample::backward_decode_box(self, deltas, anchor, clamp, g, flow)
            }
            Op::ClipBox { input, img_w, img_h, min_size } => {
                sample::backward_clip_box(self, input, img_w, img_h, min_size, g, flow)
            }
            Op::Bilinear { feat, boxv, stride } => {
                sample::backward_bilinear(self, feat, boxv, stride, out, g, flow)
            }
        }
    }
}

/// Probability clamp shared by the probability-space BCE head.
pub const BCE_CLAMP: f64 = 1e-7;

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
