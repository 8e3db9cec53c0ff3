//! Finite-difference gradient checking.
//!
//! [`grad_check`] rebuilds the graph from scratch for every probe, so the
//! builder closure must be deterministic: if it uses dropout or any other
//! randomness, it must seed its own RNG inside the closure.

use super::{Tape, TapeError, Tensor, TensorId};

/// Relative error between an analytic and a numeric derivative:
/// `|a - n| / max(1e-8, |a| + |n|)`. Zero/zero compares as zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compare analytic gradients against central differences with step `h` for
/// every coordinate of every input, and return the worst relative error.
///
/// `build` receives a fresh tape and one tracked leaf per entry of `inputs`,
/// and must return a scalar loss node.
pub fn grad_check<F>(build: F, inputs: &[Tensor], h: f64) -> Result<f64, TapeError>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId, TapeError>,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> =
        inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = build(&mut tape, &ids)?;
    if tape.value(loss).numel() != 1 {
        return Err(TapeError::NotScalar { shape: tape.shape(loss).to_vec() });
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| tape.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    // Numeric probes.
    let eval = |probe: &[Tensor]| -> Result<f64, TapeError> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> =
            probe.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = build(&mut tape, &ids)?;
        Ok(tape.value(loss).data[0])
    };
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let orig = input.data[j];
            probe[i].data[j] = orig + h;
            let up = eval(&probe)?;
            probe[i].data[j] = orig - h;
            let down = eval(&probe)?;
            probe[i].data[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i][j], numeric));
        }
    }
    Ok(worst)
}
