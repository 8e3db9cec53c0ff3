//! Proposal head over backbone features.
//!
//! A 3x3 conv maps the feature map to a hidden representation; a 1x1 conv
//! then emits five channels per anchor shape at every cell: four box deltas
//! `(tx, ty, tw, th)` and one objectness logit. Channel `5 * shape_idx + c`
//! at cell `(row, col)` belongs to the anchor with that shape at that cell,
//! matching the ordering of [`generate_anchors`].

use super::anchors::{generate_anchors, Anchor};
use super::geometry::{decode_deltas, encode_deltas, BBox, BoxDeltas};
use super::nms::{nms_select, Proposal};
use super::sampling::SampledBatch;
use crate::backbone::{extract_features, BackboneConfig};
use crate::params::{bind_frozen, BoundParams, ParamSet};
use crate::tensor::{Tape, TapeError, Tensor, TensorId};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RpnConfig {
    /// Channels of the incoming feature map.
    pub in_channels: usize,
    /// Channels of the intermediate 3x3 conv.
    pub hidden: usize,
    /// Anchor shapes per cell (scales x ratios).
    pub k: usize,
}

impl RpnConfig {
    pub fn out_channels(&self) -> usize {
        5 * self.k
    }

    pub fn init_params(&self, ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
        let (ci, hid, co) = (self.in_channels, self.hidden, self.out_channels());
        ps.insert(
            "rpn.hidden.weight",
            Tensor::xavier_uniform(vec![hid, ci, 3, 3], ci * 9, hid * 9, rng),
        );
        ps.insert("rpn.hidden.bias", Tensor::zeros(vec![hid]));
        ps.insert(
            "rpn.out.weight",
            Tensor::xavier_uniform(vec![co, hid], hid, co, rng),
        );
        ps.insert("rpn.out.bias", Tensor::zeros(vec![co]));
    }
}

/// Raw proposal map `[5k, fh, fw]` from a feature map `[C, fh, fw]`.
/// Delta channels are used as-is; objectness channels are logits.
pub fn score_map(
    tape: &mut Tape,
    bound: &BoundParams,
    features: TensorId,
) -> Result<TensorId, TapeError> {
    let h = tape.conv2d(
        features,
        bound.id("rpn.hidden.weight"),
        bound.id("rpn.hidden.bias"),
    )?;
    let h = tape.relu(h)?;
    tape.conv1x1(h, bound.id("rpn.out.weight"), bound.id("rpn.out.bias"))
}

/// Flat offset of channel `c` (0..=3 deltas, 4 objectness) of `anchor`
/// within a `[5k, fh, fw]` proposal map.
pub fn map_index(anchor: &Anchor, c: usize, fh: usize, fw: usize) -> usize {
    ((5 * anchor.shape_idx + c) * fh + anchor.cell.0) * fw + anchor.cell.1
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-anchor deltas and objectness read out of a proposal map, indexed in
/// step with the anchor list.
#[derive(Debug, Clone)]
pub struct AnchorScores {
    pub deltas: Vec<BoxDeltas>,
    /// Objectness after the sigmoid, in (0, 1).
    pub confidences: Vec<f64>,
}

impl AnchorScores {
    pub fn read(map: &Tensor, anchors: &[Anchor]) -> AnchorScores {
        assert_eq!(map.shape.len(), 3, "proposal map must be [5k, fh, fw]");
        let (fh, fw) = (map.shape[1], map.shape[2]);
        let mut deltas = Vec::with_capacity(anchors.len());
        let mut confidences = Vec::with_capacity(anchors.len());
        for a in anchors {
            deltas.push(BoxDeltas {
                tx: map.data[map_index(a, 0, fh, fw)],
                ty: map.data[map_index(a, 1, fh, fw)],
                tw: map.data[map_index(a, 2, fh, fw)],
                th: map.data[map_index(a, 3, fh, fw)],
            });
            confidences.push(sigmoid(map.data[map_index(a, 4, fh, fw)]));
        }
        AnchorScores { deltas, confidences }
    }
}

/// Training loss over a sampled anchor minibatch: mean logistic loss on the
/// objectness logits (positives labeled 1, negatives 0), plus the smooth-L1
/// distance between predicted and encoded target deltas summed over the four
/// coordinates and averaged over matched positives. Positives without a
/// matched region contribute only the objectness term.
pub fn localization_loss(
    tape: &mut Tape,
    map: TensorId,
    anchors: &[Anchor],
    batch: &SampledBatch,
    gt_regions: &[BBox],
) -> Result<TensorId, TapeError> {
    if batch.is_empty() {
        return Err(TapeError::EmptyInput { op: "localization_loss" });
    }
    let shape = tape.shape(map).to_vec();
    let (fh, fw) = (shape[1], shape[2]);

    let mut conf_idx = Vec::with_capacity(batch.len());
    let mut conf_target = Vec::with_capacity(batch.len());
    for p in &batch.positives {
        conf_idx.push(map_index(&anchors[p.anchor], 4, fh, fw));
        conf_target.push(1.0);
    }
    for &n in &batch.negatives {
        conf_idx.push(map_index(&anchors[n], 4, fh, fw));
        conf_target.push(0.0);
    }
    let logits = tape.gather(map, &conf_idx)?;
    let objectness = tape.logistic_on_logits(logits, &conf_target)?;

    let mut delta_idx = Vec::new();
    let mut delta_target = Vec::new();
    for p in &batch.positives {
        let Some(g) = p.matched_gt else { continue };
        let t = encode_deltas(&anchors[p.anchor].bbox, &gt_regions[g]).map_err(|_| {
            TapeError::DegenerateBox {
                op: "localization_loss",
                w: gt_regions[g].w,
                h: gt_regions[g].h,
            }
        })?;
        for c in 0..4 {
            delta_idx.push(map_index(&anchors[p.anchor], c, fh, fw));
        }
        delta_target.extend_from_slice(&t.as_array());
    }
    if delta_idx.is_empty() {
        return Ok(objectness);
    }
    let matched = delta_idx.len() / 4;
    let preds = tape.gather(map, &delta_idx)?;
    let box_sum = tape.smooth_l1_to(preds, &delta_target)?;
    let box_term = tape.scale(box_sum, 1.0 / matched as f64)?;
    tape.add(objectness, box_term)
}

/// Inference: run the backbone and proposal head over one image, decode and
/// clip every anchor, drop zero-extent boxes, and apply NMS selection. The
/// result holds at most `m + 1` regions; the last is always the whole image
/// at confidence 1.
#[allow(clippy::too_many_arguments)]
pub fn propose(
    ps: &ParamSet,
    backbone: &BackboneConfig,
    scales: &[f64],
    ratios: &[f64],
    image: &Tensor,
    m: usize,
    nms_iou: f64,
    delta_clamp: f64,
) -> Result<Vec<Proposal>, TapeError> {
    let mut tape = Tape::new();
    let bound = bind_frozen(ps, &mut tape);
    let img = tape.leaf(image.clone(), false);
    let feat = extract_features(&mut tape, backbone, &bound, img)?;
    let map = score_map(&mut tape, &bound, feat)?;

    let fshape = tape.shape(map).to_vec();
    let (fh, fw) = (fshape[1], fshape[2]);
    let anchors = generate_anchors(fh, fw, backbone.stride() as f64, scales, ratios);
    let scores = AnchorScores::read(tape.value(map), &anchors);

    let (img_h, img_w) = (image.shape[1] as f64, image.shape[2] as f64);
    let mut candidates = Vec::with_capacity(anchors.len());
    for (i, a) in anchors.iter().enumerate() {
        let decoded = decode_deltas(&a.bbox, &scores.deltas[i], delta_clamp);
        let clipped = decoded.clip(img_w, img_h);
        if clipped.w > 0.0 && clipped.h > 0.0 {
            candidates.push(Proposal { bbox: clipped, confidence: scores.confidences[i] });
        }
    }
    Ok(nms_select(&candidates, m, nms_iou, (img_w, img_h)))
}
