//! Region feature encoder: two fully-connected layers with ReLU and dropout
//! that map a flattened bilinear feature grid to a fixed-width vector shared
//! by every downstream consumer (the label decoder and the global image
//! path alike).

use crate::params::{BoundParams, ParamSet};
use crate::tensor::{DropoutMode, Tape, TapeError, Tensor, TensorId};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    /// Flattened input size: feature channels x grid rows x grid cols.
    pub in_dim: usize,
    pub widths: [usize; 2],
}

impl EncoderConfig {
    pub fn for_features(channels: usize, grid: usize) -> Self {
        EncoderConfig { in_dim: channels * grid * grid, widths: [256, 256] }
    }

    pub fn out_dim(&self) -> usize {
        self.widths[1]
    }

    pub fn init_params(&self, ps: &mut ParamSet, rng: &mut ChaCha8Rng) {
        let [w0, w1] = self.widths;
        ps.insert(
            "encoder.fc0.weight",
            Tensor::xavier_uniform(vec![w0, self.in_dim], self.in_dim, w0, rng),
        );
        ps.insert("encoder.fc0.bias", Tensor::zeros(vec![w0]));
        ps.insert(
            "encoder.fc1.weight",
            Tensor::xavier_uniform(vec![w1, w0], w0, w1, rng),
        );
        ps.insert("encoder.fc1.bias", Tensor::zeros(vec![w1]));
    }
}

/// Encode one region's sampled feature grid (any shape; it is flattened) to
/// the shared representation. Dropout follows each ReLU and is active only
/// in [`DropoutMode::Train`].
pub fn encode_region(
    tape: &mut Tape,
    bound: &BoundParams,
    region_features: TensorId,
    dropout: f64,
    mode: DropoutMode,
    rng: &mut ChaCha8Rng,
) -> Result<TensorId, TapeError> {
    let mut x = tape.flatten(region_features)?;
    for layer in 0..2 {
        let w = bound.id(&format!("encoder.fc{layer}.weight"));
        let b = bound.id(&format!("encoder.fc{layer}.bias"));
        x = tape.linear(w, x, Some(b))?;
        x = tape.relu(x)?;
        x = tape.dropout(x, dropout, mode, rng)?;
    }
    Ok(x)
}
