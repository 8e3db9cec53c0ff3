//! Cross-region label fusion.
//!
//! Every region decodes its own label sequence; fusion pools those
//! per-step distributions into one image-level score per label by taking
//! the elementwise maximum over all (step, region) pairs. The image-level
//! training loss pushes the softmax of the fused scores toward the
//! normalized ground-truth label vector.

use crate::rnn::RegionUnroll;
use crate::tensor::{Tape, TapeError, TensorId};

/// Dense `[region][step][label]` view of the per-step distributions, padded
/// with zeros past each region's emitted length. The end-symbol coordinate
/// is dropped: only the first `labels` entries of each distribution count.
/// Softmax outputs are strictly positive, so padding never wins a max.
#[derive(Debug, Clone)]
pub struct PredictionGrid {
    pub regions: usize,
    pub steps: usize,
    pub labels: usize,
    data: Vec<f64>,
}

impl PredictionGrid {
    pub fn from_unrolls(
        tape: &Tape,
        unrolls: &[RegionUnroll],
        steps: usize,
        labels: usize,
    ) -> Self {
        let regions = unrolls.len();
        let mut data = vec![0.0; regions * steps * labels];
        for (m, un) in unrolls.iter().enumerate() {
            assert!(un.probs.len() <= steps, "unroll longer than the grid");
            for (t, &p) in un.probs.iter().enumerate() {
                let v = tape.value(p);
                assert!(v.data.len() > labels);
                data[(m * steps + t) * labels..(m * steps + t + 1) * labels]
                    .copy_from_slice(&v.data[..labels]);
            }
        }
        PredictionGrid { regions, steps, labels, data }
    }

    pub fn get(&self, region: usize, step: usize, label: usize) -> f64 {
        self.data[(region * self.steps + step) * self.labels + label]
    }
}

/// Image-level label scores: for each label, the maximum over every
/// (step, region) slot of the grid.
pub fn max_pool_fusion(grid: &PredictionGrid) -> Vec<f64> {
    let mut fused = vec![0.0; grid.labels];
    for t in 0..grid.steps {
        for m in 0..grid.regions {
            for (l, f) in fused.iter_mut().enumerate() {
                let v = grid.get(m, t, l);
                if v > *f {
                    *f = v;
                }
            }
        }
    }
    fused
}

/// Tape-side fusion over live unrolls, for training. Entries are ordered
/// step-major then region, so a max tie routes its gradient to the earliest
/// (step, region) pair — the same slot the pure grid would report.
pub fn fused_scores(
    tape: &mut Tape,
    unrolls: &[RegionUnroll],
    labels: usize,
) -> Result<TensorId, TapeError> {
    let steps = unrolls.iter().map(|u| u.probs.len()).max().unwrap_or(0);
    let mut inputs = Vec::new();
    for t in 0..steps {
        for un in unrolls {
            if let Some(&p) = un.probs.get(t) {
                inputs.push(p);
            }
        }
    }
    tape.max_over_first_l(&inputs, labels)
}

/// Squared distance between the softmax of the fused scores and the
/// normalized truth vector, summed over labels. `truth` is the image's 0/1
/// label vector and must mark at least one label.
pub fn fusion_loss(
    tape: &mut Tape,
    fused: TensorId,
    truth: &[f64],
) -> Result<TensorId, TapeError> {
    let total: f64 = truth.iter().sum();
    if total <= 0.0 {
        return Err(TapeError::EmptyInput { op: "fusion_loss" });
    }
    let q: Vec<f64> = truth.iter().map(|y| y / total).collect();
    let predicted = tape.softmax(fused)?;
    tape.squared_error_to(predicted, &q)
}
