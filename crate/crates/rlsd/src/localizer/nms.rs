//! Greedy non-maximum suppression over scored proposals.

use super::geometry::{iou, BBox};
use serde::{Deserialize, Serialize};

/// A candidate region with an objectness confidence in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub confidence: f64,
}

/// [`nms`] returning the indices of the kept proposals (in keep order)
/// instead of the proposals themselves, for callers that need to trace a
/// survivor back to the anchor it came from.
pub fn nms_indices(proposals: &[Proposal], max_keep: usize, iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .confidence
            .partial_cmp(&proposals[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.len() >= max_keep {
            break;
        }
        if kept.iter().all(|&k| iou(&proposals[k].bbox, &proposals[i].bbox) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

/// Keep up to `max_keep` proposals by descending confidence, dropping any
/// candidate whose IoU with an already-kept proposal exceeds
/// `iou_threshold`. The kept set therefore has pairwise IoU <= threshold.
/// Confidence ties resolve toward the earlier input index.
pub fn nms(proposals: &[Proposal], max_keep: usize, iou_threshold: f64) -> Vec<Proposal> {
    nms_indices(proposals, max_keep, iou_threshold).into_iter().map(|i| proposals[i]).collect()
}

/// [`nms`] followed by the whole-image box appended as one extra proposal
/// with confidence 1, giving at most `m + 1` regions. The appended box is
/// exempt from the pairwise-IoU guarantee; it is always present so that
/// image-wide context survives even when every anchor scores poorly.
pub fn nms_select(
    proposals: &[Proposal],
    m: usize,
    iou_threshold: f64,
    image: (f64, f64),
) -> Vec<Proposal> {
    let mut kept = nms(proposals, m, iou_threshold);
    kept.push(Proposal {
        bbox: BBox::whole_image(image.0, image.1),
        confidence: 1.0,
    });
    kept
}
