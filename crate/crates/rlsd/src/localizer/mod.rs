//! Region-proposal machinery: box geometry, the anchor menu, greedy NMS,
//! ground-truth clustering, anchor minibatch sampling, and the proposal
//! scoring head with its localization loss.
//!
//! Boxes are center format `(x, y, w, h)` in image pixels throughout.

mod anchors;
mod cluster;
mod geometry;
mod nms;
mod rpn;
mod sampling;

pub use anchors::{generate_anchors, Anchor};
pub use cluster::cluster_merge_boxes;
pub use geometry::{
    decode_deltas, encode_deltas, iou, smooth_l1, BBox, BoxDeltas, LocalizerError,
};
pub use nms::{nms, nms_indices, nms_select, Proposal};
pub use rpn::{
    localization_loss, map_index, propose, score_map, AnchorScores, RpnConfig,
};
pub use sampling::{sample_minibatch, PositiveSample, SampleMode, SampledBatch};
