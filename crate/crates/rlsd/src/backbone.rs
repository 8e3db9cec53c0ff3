//! Convolutional feature extractor plus the plain multi-label CNN head.
//!
//! The extractor is a VGG-flavored stack: 3x3 same-padding convolutions with
//! ReLU, interleaved with 2x2 max pools. The desk-scale default keeps four
//! conv layers and two pools (downsample 4, 32 channels at 64x64 input); a
//! full-size 13-conv configuration is expressible through the same struct.

use crate::params::{BoundParams, ParamSet};
use crate::tensor::{DropoutMode, Tape, TapeError, Tensor, TensorId};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Output channels of each 3x3 conv layer, in order.
    pub layer_channels: Vec<usize>,
    /// Indices of conv layers followed by a 2x2 max pool.
    pub pool_after: Vec<usize>,
}

impl BackboneConfig {
    /// Desk-scale default: four convs, two pools, 32 output channels.
    /// At 64x64 input the feature map is 32 x 16 x 16 (downsample 4).
    pub fn desk() -> Self {
        BackboneConfig {
            in_channels: 3,
            layer_channels: vec![8, 16, 32, 32],
            pool_after: vec![0, 1],
        }
    }

    /// Full-size configuration: the thirteen 3x3 conv layers of a VGG-16
    /// feature stack with pooling after convs 2, 4, 7 and 10. Features are
    /// taken before the stack's fifth pool, giving downsample 16 — a 224x224
    /// input maps to 512 x 14 x 14.
    pub fn paper() -> Self {
        BackboneConfig {
            in_channels: 3,
            layer_channels: vec![64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512],
            pool_after: vec![1, 3, 6, 9],
        }
    }

    /// Total downsample factor from input pixels to feature cells.
    pub fn stride(&self) -> usize {
        1 << self.pool_after.len()
    }

    pub fn out_channels(&self) -> usize {
        *self.layer_channels.last().expect("backbone needs at least one conv layer")
    }

    pub fn feature_side(&self, input: usize) -> usize {
        input / self.stride()
    }

    pub fn init_params(&self, ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
        let mut ci = self.in_channels;
        for (i, &co) in self.layer_channels.iter().enumerate() {
            ps.insert(
                format!("backbone.conv{i}.weight"),
                Tensor::xavier_uniform(vec![co, ci, 3, 3], ci * 9, co * 9, rng),
            );
            ps.insert(format!("backbone.conv{i}.bias"), Tensor::zeros(vec![co]));
            ci = co;
        }
    }
}

/// Run the conv stack over a `[in_channels, H, W]` image. H and W must be
/// divisible by the downsample factor; output is `[C, H/s, W/s]`.
pub fn extract_features(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    bound: &BoundParams,
    image: TensorId,
) -> Result<TensorId, TapeError> {
    let shape = tape.value(image).shape.clone();
    let s = cfg.stride();
    if shape.len() != 3
        || shape[0] != cfg.in_channels
        || shape[1] % s != 0
        || shape[2] % s != 0
    {
        return Err(TapeError::BadShape {
            op: "extract_features",
            expected: format!(
                "[{}, H, W] with H and W divisible by {s}",
                cfg.in_channels
            ),
            got: shape,
        });
    }
    let mut x = image;
    for i in 0..cfg.layer_channels.len() {
        let w = bound.id(&format!("backbone.conv{i}.weight"));
        let b = bound.id(&format!("backbone.conv{i}.bias"));
        x = tape.conv2d(x, w, b)?;
        x = tape.relu(x)?;
        if cfg.pool_after.contains(&i) {
            x = tape.max_pool2x2(x)?;
        }
    }
    Ok(x)
}

/// Parameters for the multi-label CNN baseline: the backbone plus one
/// fully-connected layer from globally averaged features to `labels` logits.
pub fn multi_cnn_init(
    cfg: &BackboneConfig,
    labels: usize,
    rng: &mut ChaCha8Rng,
) -> ParamSet {
    let mut ps = ParamSet::new();
    cfg.init_params(&mut ps, rng);
    let c = cfg.out_channels();
    ps.insert(
        "multicnn.fc.weight",
        Tensor::xavier_uniform(vec![labels, c], c, labels, rng),
    );
    ps.insert("multicnn.fc.bias", Tensor::zeros(vec![labels]));
    ps
}

/// Per-label scores in (0, 1): backbone -> global average pool -> dropout
/// -> fully-connected -> sigmoid.
#[allow(clippy::too_many_arguments)]
pub fn multi_cnn_forward(
    tape: &mut Tape,
    cfg: &BackboneConfig,
    bound: &BoundParams,
    image: TensorId,
    dropout: f64,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId, TapeError> {
    let feats = extract_features(tape, cfg, bound, image)?;
    let pooled = tape.global_avg_pool(feats)?;
    let pooled = tape.dropout(pooled, dropout, mode, rng)?;
    let logits = tape.linear(
        bound.id("multicnn.fc.weight"),
        pooled,
        Some(bound.id("multicnn.fc.bias")),
    )?;
    tape.sigmoid(logits)
}

/// Mean over labels of independent binary cross-entropies against a 0/1
/// truth vector; probabilities are clamped away from 0 and 1 first.
pub fn multi_cnn_loss(
    tape: &mut Tape,
    scores: TensorId,
    truth: &[f64],
) -> Result<TensorId, TapeError> {
    tape.bce_on_probs(scores, truth)
}
