//! Gradient accumulation across tapes and SGD with momentum.

use crate::params::{BoundParams, ParamSet};
use crate::tensor::Tape;
use std::collections::HashMap;

/// Running per-parameter gradient sums, keyed by parameter name. Reduction
/// order is the caller's accumulation order, so serial loops stay
/// bit-deterministic.
#[derive(Debug, Default)]
pub struct GradStore {
    sums: HashMap<String, Vec<f64>>,
}

impl GradStore {
    pub fn new() -> Self {
        GradStore::default()
    }

    /// Fold the gradients a finished tape holds for `bound` into the sums.
    pub fn accumulate(&mut self, tape: &Tape, bound: &BoundParams) {
        for (name, id) in bound.iter() {
            if let Some(g) = tape.grad(id) {
                match self.sums.get_mut(name) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(g) {
                            *a += v;
                        }
                    }
                    None => {
                        self.sums.insert(name.to_string(), g.to_vec());
                    }
                }
            }
        }
    }

    /// Multiply every stored gradient by `c` (e.g. 1/batch for a mean).
    pub fn scale(&mut self, c: f64) {
        for g in self.sums.values_mut() {
            for v in g.iter_mut() {
                *v *= c;
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.sums.get(name).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }
}

/// Per-parameter momentum buffers.
#[derive(Debug, Default)]
pub struct SgdState {
    velocity: HashMap<String, Vec<f64>>,
}

impl SgdState {
    pub fn new() -> Self {
        SgdState::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A non-finite gradient was seen; no parameter was touched.
    SkippedNonFinite,
}

/// One SGD step with momentum and L2 weight decay:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * theta
/// theta <- theta - lr * v
/// ```
///
/// Parameters without a gradient in `grads` (frozen or unused this step)
/// are untouched. If any gradient contains a non-finite value the whole
/// step is skipped and logged, leaving parameters and velocities intact.
pub fn sgd_step(
    params: &mut ParamSet,
    grads: &GradStore,
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> StepOutcome {
    // Validate first so a poisoned step cannot half-apply.
    for (name, _) in params.iter() {
        if let Some(g) = grads.get(name) {
            if g.iter().any(|v| !v.is_finite()) {
                log::warn!("skipping SGD step: non-finite gradient in {name}");
                return StepOutcome::SkippedNonFinite;
            }
        }
    }
    let names: Vec<String> = params
        .iter()
        .filter(|(n, _)| grads.get(n).is_some())
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let g = grads.get(&name).unwrap();
        let theta = params.get_mut(&name).unwrap();
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; theta.numel()]);
        for i in 0..theta.data.len() {
            v[i] = momentum * v[i] + g[i] + weight_decay * theta.data[i];
            theta.data[i] -= lr * v[i];
        }
    }
    StepOutcome::Applied
}
