//! The label-sequence decoder in isolation: how a region feature seeds the
//! LSTM state, how each decoded label feeds back into the next step, and
//! how the END symbol stops the unroll without ever appearing as a label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlsd::params::{bind_all, ParamSet};
use rlsd::rnn::{unroll_region, LstmConfig};
use rlsd::tensor::{DropoutMode, Tape, Tensor};

fn main() -> anyhow::Result<()> {
    let labels = 5;
    let cfg = LstmConfig { feat_dim: 16, embed: 8, hidden: 24, labels };
    println!(
        "decoder: {}-dim region feature, {} labels + END (vocab {}, END index {})",
        cfg.feat_dim,
        labels,
        cfg.vocab(),
        cfg.end_index()
    );

    let mut init_rng = ChaCha8Rng::seed_from_u64(42);
    let mut ps = ParamSet::new();
    cfg.init_params(&mut ps, &mut init_rng);

    // Decode a few random region features. With untrained weights the
    // sequences are arbitrary, but the contract already holds: at most
    // t_max emissions, decoding stops the moment END wins the argmax, and
    // END itself is never reported as a label.
    let t_max = 6;
    let mut feat_rng = ChaCha8Rng::seed_from_u64(7);
    let mut ended_count = 0;
    for trial in 0..8 {
        let mut tape = Tape::new();
        let bound = bind_all(&ps, &mut tape);
        let region = tape.leaf(
            Tensor::from_vec(
                vec![cfg.feat_dim],
                (0..cfg.feat_dim).map(|_| feat_rng.random::<f64>() * 2.0 - 1.0).collect(),
            ),
            false,
        );
        let mut step_rng = ChaCha8Rng::seed_from_u64(trial);
        let unrolled = unroll_region(
            &mut tape,
            &bound,
            &cfg,
            region,
            t_max,
            0.0,
            DropoutMode::Eval,
            &mut step_rng,
        )?;
        assert!(unrolled.labels.iter().all(|&l| l != cfg.end_index()));
        assert!(unrolled.probs.len() <= t_max);
        ended_count += usize::from(unrolled.ended);

        let last = tape.value(*unrolled.probs.last().unwrap());
        println!(
            "region {trial}: {} step(s), labels {:?}, {}  (last distribution sums to {:.6})",
            unrolled.probs.len(),
            unrolled.labels,
            if unrolled.ended { "stopped at END" } else { "hit the step cap" },
            last.data.iter().sum::<f64>()
        );
    }
    println!("{ended_count}/8 regions stopped early via END\n");

    // The feedback path is visible if we re-decode one region and print the
    // winning probability at each step; the previous winner conditions the
    // next distribution.
    let mut tape = Tape::new();
    let bound = bind_all(&ps, &mut tape);
    let region = tape.leaf(
        Tensor::from_vec(vec![cfg.feat_dim], (0..cfg.feat_dim).map(|i| (i as f64 * 0.37).sin()).collect()),
        false,
    );
    let mut step_rng = ChaCha8Rng::seed_from_u64(99);
    let unrolled = unroll_region(&mut tape, &bound, &cfg, region, t_max, 0.0, DropoutMode::Eval, &mut step_rng)?;
    for (i, &p) in unrolled.probs.iter().enumerate() {
        let probs = &tape.value(p).data;
        let (win, &top) = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let name = if win == cfg.end_index() { "END".to_string() } else { format!("label {win}") };
        println!("step {i}: argmax {name} at p={top:.3}");
    }
    Ok(())
}
