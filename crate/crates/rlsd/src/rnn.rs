//! LSTM label decoder.
//!
//! Each region's encoded vector seeds a label sequence. An init step feeds
//! the vector (through a feature embedding) into the recurrence from zero
//! state; its distribution is not part of the output but its argmax picks
//! the first feedback label. Every following step feeds back the one-hot of
//! the previously decoded label through a label embedding, projects the
//! hidden state to a distribution over the `L` labels plus an end symbol,
//! and stops once the end symbol wins the argmax (that step's distribution
//! is kept; the end symbol itself is never reported as a label). Feedback
//! one-hots are constants — no gradient flows through the argmax choice,
//! only into the embedding that consumes it.

use crate::params::{BoundParams, ParamSet};
use crate::tensor::{DropoutMode, Tape, TapeError, Tensor, TensorId};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmConfig {
    /// Width of the encoded region vector.
    pub feat_dim: usize,
    /// Width of the feature/label embeddings feeding the recurrence.
    pub embed: usize,
    pub hidden: usize,
    /// Real labels; the decoder vocabulary adds one end symbol.
    pub labels: usize,
}

const GATES: [&str; 4] = ["i", "f", "o", "g"];

impl LstmConfig {
    pub fn vocab(&self) -> usize {
        self.labels + 1
    }

    /// Index of the end-of-sequence symbol in every emitted distribution.
    pub fn end_index(&self) -> usize {
        self.labels
    }

    pub fn init_params(&self, ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
        ps.insert(
            "lstm.embed_feature.weight",
            Tensor::xavier_uniform(vec![self.embed, self.feat_dim], self.feat_dim, self.embed, rng),
        );
        ps.insert(
            "lstm.embed_label.weight",
            Tensor::xavier_uniform(vec![self.embed, self.vocab()], self.vocab(), self.embed, rng),
        );
        for gate in GATES {
            ps.insert(
                format!("lstm.{gate}.wx"),
                Tensor::xavier_uniform(vec![self.hidden, self.embed], self.embed, self.hidden, rng),
            );
            ps.insert(
                format!("lstm.{gate}.wh"),
                Tensor::xavier_uniform(vec![self.hidden, self.hidden], self.hidden, self.hidden, rng),
            );
            ps.insert(format!("lstm.{gate}.b"), Tensor::zeros(vec![self.hidden]));
        }
        ps.insert(
            "lstm.proj.weight",
            Tensor::xavier_uniform(vec![self.vocab(), self.hidden], self.hidden, self.vocab(), rng),
        );
        ps.insert("lstm.proj.bias", Tensor::zeros(vec![self.vocab()]));
    }
}

/// One recurrence step: gate preactivations are `wx . x + wh . h + b`, the
/// cell update is `f * c + i * g`, and the new hidden state `o * tanh(c')`.
pub fn lstm_step(
    tape: &mut Tape,
    bound: &BoundParams,
    x: TensorId,
    h: TensorId,
    c: TensorId,
) -> Result<(TensorId, TensorId), TapeError> {
    let mut acts = [x; 4]; // overwritten below
    for (slot, gate) in acts.iter_mut().zip(GATES) {
        let from_x = tape.linear(
            bound.id(&format!("lstm.{gate}.wx")),
            x,
            Some(bound.id(&format!("lstm.{gate}.b"))),
        )?;
        let from_h = tape.linear(bound.id(&format!("lstm.{gate}.wh")), h, None)?;
        let pre = tape.add(from_x, from_h)?;
        *slot = if gate == "g" { tape.tanh(pre)? } else { tape.sigmoid(pre)? };
    }
    let [i, f, o, g] = acts;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    let squashed = tape.tanh(c_new)?;
    let h_new = tape.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Run the init step: the embedded region vector enters the recurrence from
/// zero state. Returns the resulting `(h, c)`.
pub fn init_from_region(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &LstmConfig,
    region: TensorId,
) -> Result<(TensorId, TensorId), TapeError> {
    let zero = tape.leaf(Tensor::zeros(vec![cfg.hidden]), false);
    let x0 = tape.linear(bound.id("lstm.embed_feature.weight"), region, None)?;
    lstm_step(tape, bound, x0, zero, zero)
}

/// Distribution over the vocabulary from a hidden state: dropout on the
/// hidden state, then the output projection and a softmax.
fn emit_probs(
    tape: &mut Tape,
    bound: &BoundParams,
    h: TensorId,
    dropout: f64,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId, TapeError> {
    let dropped = tape.dropout(h, dropout, mode, rng)?;
    let logits = tape.linear(
        bound.id("lstm.proj.weight"),
        dropped,
        Some(bound.id("lstm.proj.bias")),
    )?;
    tape.softmax(logits)
}

/// First index of the maximum; ties break toward the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Constant one-hot of a distribution's argmax — the feedback "latent
/// label". Depends only on the ordering of the entries.
pub fn latent_label(p: &[f64]) -> Vec<f64> {
    let mut onehot = vec![0.0; p.len()];
    onehot[argmax(p)] = 1.0;
    onehot
}

/// The decoded sequence for one region: emitted distributions in step
/// order (the step that emitted the end symbol included, nothing after),
/// and the decoded labels, which never include the end symbol.
#[derive(Debug)]
pub struct RegionUnroll {
    pub probs: Vec<TensorId>,
    /// `probs.len()` labels when the unroll hit the step cap, one fewer
    /// when it stopped at the end symbol.
    pub labels: Vec<usize>,
    /// Whether decoding stopped by emitting the end symbol.
    pub ended: bool,
}

fn feedback_input(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &LstmConfig,
    label: usize,
) -> Result<TensorId, TapeError> {
    let mut onehot = vec![0.0; cfg.vocab()];
    onehot[label] = 1.0;
    let prev = tape.leaf(Tensor::from_vec(vec![cfg.vocab()], onehot), false);
    tape.linear(bound.id("lstm.embed_label.weight"), prev, None)
}

/// Decode a label sequence from one encoded region vector, emitting at most
/// `t_max` distributions.
#[allow(clippy::too_many_arguments)]
pub fn unroll_region(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &LstmConfig,
    region: TensorId,
    t_max: usize,
    dropout: f64,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<RegionUnroll, TapeError> {
    if t_max == 0 {
        return Err(TapeError::EmptyInput { op: "unroll_region" });
    }
    let (mut h, mut c) = init_from_region(tape, bound, cfg, region)?;
    let p0 = emit_probs(tape, bound, h, dropout, mode, rng)?;
    let mut prev = argmax(&tape.value(p0).data);

    let mut probs = Vec::new();
    let mut labels = Vec::new();
    let mut ended = false;
    for _ in 0..t_max {
        let x = feedback_input(tape, bound, cfg, prev)?;
        let (h_new, c_new) = lstm_step(tape, bound, x, h, c)?;
        h = h_new;
        c = c_new;
        let p = emit_probs(tape, bound, h, dropout, mode, rng)?;
        let decoded = argmax(&tape.value(p).data);
        probs.push(p);
        if decoded == cfg.end_index() {
            ended = true;
            break;
        }
        labels.push(decoded);
        prev = decoded;
    }
    Ok(RegionUnroll { probs, labels, ended })
}

/// The global image-to-sequence recurrence shared by the CNN+LSTM baseline
/// and its pretraining: the image feature enters once through the init
/// step, then exactly `t` feedback steps run — no early stop. Returns the
/// `t` per-step distributions.
#[allow(clippy::too_many_arguments)]
pub fn global_lstm_steps(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &LstmConfig,
    image_feature: TensorId,
    t: usize,
    dropout: f64,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TensorId>, TapeError> {
    if t == 0 {
        return Err(TapeError::EmptyInput { op: "global_lstm_steps" });
    }
    let (mut h, mut c) = init_from_region(tape, bound, cfg, image_feature)?;
    let p0 = emit_probs(tape, bound, h, dropout, mode, rng)?;
    let mut prev = argmax(&tape.value(p0).data);

    let mut probs = Vec::with_capacity(t);
    for _ in 0..t {
        let x = feedback_input(tape, bound, cfg, prev)?;
        let (h_new, c_new) = lstm_step(tape, bound, x, h, c)?;
        h = h_new;
        c = c_new;
        let p = emit_probs(tape, bound, h, dropout, mode, rng)?;
        prev = argmax(&tape.value(p).data);
        probs.push(p);
    }
    Ok(probs)
}

/// [`global_lstm_steps`] plus its training loss: the mean over steps of the
/// squared error between each distribution's first `L` entries and the
/// normalized truth vector (every step is held to the full label set).
#[allow(clippy::too_many_arguments)]
pub fn global_lstm_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &LstmConfig,
    image_feature: TensorId,
    truth: &[f64],
    t: usize,
    dropout: f64,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<TensorId>, TensorId), TapeError> {
    let total: f64 = truth.iter().sum();
    if truth.len() != cfg.labels || total <= 0.0 {
        return Err(TapeError::BadShape {
            op: "global_lstm_forward",
            expected: format!("{} truth entries with at least one positive", cfg.labels),
            got: vec![truth.len()],
        });
    }
    let target: Vec<f64> = truth.iter().map(|y| y / total).collect();
    let label_coords: Vec<usize> = (0..cfg.labels).collect();

    let probs = global_lstm_steps(tape, bound, cfg, image_feature, t, dropout, mode, rng)?;
    let mut errors = Vec::with_capacity(probs.len());
    for &p in &probs {
        let restricted = tape.gather(p, &label_coords)?;
        errors.push(tape.squared_error_to(restricted, &target)?);
    }
    let sum = tape.add_n(&errors)?;
    let loss = tape.scale(sum, 1.0 / probs.len() as f64)?;
    Ok((probs, loss))
}
