//! Anchor minibatch selection for localizer training.

use super::anchors::Anchor;
use super::geometry::{iou, BBox};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

/// How anchors are split into positives and negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Rank by predicted confidence: top M/2 positive, bottom M/2 negative.
    /// Used when no box annotations are available.
    Confidence,
    /// Compare against ground truth: max-IoU > pos threshold is positive,
    /// < neg threshold negative, the band in between is excluded.
    Iou,
}

#[derive(Debug, Clone, Copy)]
pub struct PositiveSample {
    pub anchor: usize,
    /// Index of the ground-truth region this anchor matches (its argmax
    /// IoU). Present in IoU mode only.
    pub matched_gt: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct SampledBatch {
    pub positives: Vec<PositiveSample>,
    /// Anchor indices.
    pub negatives: Vec<usize>,
}

impl SampledBatch {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Select up to `m` anchors (at most m/2 positive and m/2 negative).
///
/// IoU mode compares each anchor against `gt_regions` and subsamples each
/// side with the caller's RNG, so repeated calls with an equally-seeded RNG
/// pick the same batch. Confidence mode ranks `confidences` (ties toward
/// the lower anchor index) and needs no ground truth. Both sides come back
/// sorted by ascending anchor index.
#[allow(clippy::too_many_arguments)]
pub fn sample_minibatch(
    anchors: &[Anchor],
    confidences: &[f64],
    gt_regions: &[BBox],
    mode: SampleMode,
    m: usize,
    pos_iou: f64,
    neg_iou: f64,
    rng: &mut ChaCha8Rng,
) -> SampledBatch {
    let half = m / 2;
    match mode {
        SampleMode::Iou => {
            let mut pos: Vec<PositiveSample> = Vec::new();
            let mut neg: Vec<usize> = Vec::new();
            for (idx, anchor) in anchors.iter().enumerate() {
                let mut best = 0.0;
                let mut best_gt = None;
                for (g, region) in gt_regions.iter().enumerate() {
                    let v = iou(&anchor.bbox, region);
                    if v > best {
                        best = v;
                        best_gt = Some(g);
                    }
                }
                if best > pos_iou {
                    pos.push(PositiveSample { anchor: idx, matched_gt: best_gt });
                } else if best < neg_iou {
                    neg.push(idx);
                }
                // Anchors in [neg_iou, pos_iou] are excluded from the batch.
            }
            if pos.len() > half {
                pos.shuffle(rng);
                pos.truncate(half);
            }
            if neg.len() > half {
                neg.shuffle(rng);
                neg.truncate(half);
            }
            pos.sort_by_key(|p| p.anchor);
            neg.sort_unstable();
            SampledBatch { positives: pos, negatives: neg }
        }
        SampleMode::Confidence => {
            let mut order: Vec<usize> = (0..confidences.len()).collect();
            order.sort_by(|&a, &b| {
                confidences[b]
                    .partial_cmp(&confidences[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(a.cmp(&b))
            });
            // When fewer than m anchors exist, shrink both sides equally so
            // they never overlap.
            let take = half.min(order.len() / 2);
            let mut pos: Vec<usize> = order[..take].to_vec();
            let mut neg: Vec<usize> = order[order.len() - take..].to_vec();
            pos.sort_unstable();
            neg.sort_unstable();
            SampledBatch {
                positives: pos
                    .into_iter()
                    .map(|anchor| PositiveSample { anchor, matched_gt: None })
                    .collect(),
                negatives: neg,
            }
        }
    }
}
