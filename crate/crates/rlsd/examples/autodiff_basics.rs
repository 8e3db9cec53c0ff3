//! The reverse-mode tape from the ground up: record a few ops, pull
//! gradients back, and confirm them against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlsd::tensor::{grad_check, Tape, Tensor};

fn main() -> anyhow::Result<()> {
    // A scalar chain first: y = sum((a + b) * a * 1.7).
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]), true);
    let b = tape.leaf(Tensor::from_vec(vec![3], vec![1.0, 0.25, -0.5]), true);
    let s = tape.add(a, b)?;
    let m = tape.mul(s, a)?;
    let scaled = tape.scale(m, 1.7)?;
    let y = tape.sum(scaled)?;
    tape.backward(y)?;
    println!("y            = {:.4}", tape.value(y).data[0]);
    println!("dy/da        = {:?}", tape.grad(a).unwrap());
    println!("dy/db        = {:?}", tape.grad(b).unwrap());

    // The same graph through the finite-difference checker. The closure
    // rebuilds the graph for every probe, so the reported number is the
    // worst relative error over every input coordinate.
    let inputs = [
        Tensor::from_vec(vec![3], vec![0.5, -1.0, 2.0]),
        Tensor::from_vec(vec![3], vec![1.0, 0.25, -0.5]),
    ];
    let err = grad_check(
        |t, ids| {
            let s = t.add(ids[0], ids[1])?;
            let m = t.mul(s, ids[0])?;
            let scaled = t.scale(m, 1.7)?;
            t.sum(scaled)
        },
        &inputs,
        1e-5,
    )?;
    println!("elementwise chain: worst rel err vs finite differences = {err:.2e}");

    // Something closer to the real model: a 3x3 convolution, relu, 2x2 max
    // pool, then a linear readout into a logistic loss. Every weight is a
    // tracked leaf, so backward fills gradients for all of them at once.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut randn = |shape: Vec<usize>| {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random::<f64>() - 0.5).collect())
    };
    let image = randn(vec![2, 8, 8]);
    let kernel = randn(vec![4, 2, 3, 3]);
    let kbias = randn(vec![4]);
    let weight = randn(vec![3, 4]);
    let wbias = randn(vec![3]);
    let target = [1.0, 0.0, 1.0];

    let err = grad_check(
        |t, ids| {
            let conv = t.conv2d(ids[0], ids[1], ids[2])?;
            let act = t.relu(conv)?;
            let pooled = t.max_pool2x2(act)?;
            let feat = t.global_avg_pool(pooled)?;
            let logits = t.linear(ids[3], feat, Some(ids[4]))?;
            t.logistic_on_logits(logits, &target)
        },
        &[image.clone(), kernel.clone(), kbias.clone(), weight.clone(), wbias.clone()],
        1e-5,
    )?;
    println!("conv -> relu -> pool -> linear -> logistic: worst rel err = {err:.2e}");

    // And the head used during fusion: per-class max over several
    // distributions, compared against a target through a squared error.
    let mut tape = Tape::new();
    let p1 = tape.leaf(Tensor::from_vec(vec![4], vec![0.1, 0.6, 0.2, 0.1]), true);
    let p2 = tape.leaf(Tensor::from_vec(vec![4], vec![0.5, 0.1, 0.3, 0.1]), true);
    let fused = tape.max_over_first_l(&[p1, p2], 3)?;
    let loss = tape.squared_error_to(fused, &[0.0, 1.0, 0.0])?;
    tape.backward(loss)?;
    println!("fused maxima = {:?}", tape.value(fused).data);
    println!("grad wrt p1  = {:?} (only the winning entries are nonzero)", tape.grad(p1).unwrap());
    println!("grad wrt p2  = {:?}", tape.grad(p2).unwrap());
    Ok(())
}
