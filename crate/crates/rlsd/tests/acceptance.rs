//! The acceptance gate for the whole model family, one test per criterion.
//!
//! Run it alone with the criterion lines visible:
//!
//! ```text
//! cargo test --test acceptance -- --nocapture
//! ```
//!
//! Criteria 5–7 share one desk-scale run (2000 train / 500 test images,
//! four model regimes trained from scratch), so the suite takes tens of
//! minutes on one core; everything else finishes in seconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlsd::backbone::{multi_cnn_forward, BackboneConfig};
use rlsd::cli::{cmd_eval, cmd_gen_data, cmd_train, EvalArgs, GenDataArgs, TrainArgs};
use rlsd::config::RunConfig;
use rlsd::fusion::{fused_scores, fusion_loss, max_pool_fusion, PredictionGrid};
use rlsd::localizer::{
    decode_deltas, encode_deltas, generate_anchors, iou, localization_loss, nms, score_map,
    smooth_l1, BBox, PositiveSample, Proposal, SampledBatch,
};
use rlsd::metrics::{average_precision_at, top_k_predict, EvalRecord, MetricsReport};
use rlsd::params::{BoundParams, ParamSet};
use rlsd::rnn::{lstm_step, unroll_region, LstmConfig, RegionUnroll};
use rlsd::synthdata::{generate_dataset, Split};
use rlsd::tensor::{grad_check, DropoutMode, Tape, TapeError, Tensor, TensorId};
use rlsd::train::{evaluate_split, train_model, Dataset};
use std::fs;
use std::path::Path;
use std::sync::LazyLock;
use std::time::Instant;
use tempfile::TempDir;

fn pass(criterion: usize, name: &str, detail: String) {
    println!("criterion {criterion} ({name}): PASS — {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in (-1, 1), excluding margins around 0 and ±1 where relu and
/// smooth-L1 kink.
fn smooth_values(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = r.random::<f64>() * 2.0 - 1.0;
            if v.abs() > 0.05 && (v.abs() - 1.0).abs() > 0.05 {
                break v;
            }
        })
        .collect()
}

fn smooth_tensor(shape: Vec<usize>, r: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, smooth_values(n, r))
}

/// Collapse a tensor to a scalar through a fixed random positive projection
/// so the op under test sees a non-uniform incoming gradient.
fn project(tape: &mut Tape, y: TensorId, seed: u64) -> Result<TensorId, TapeError> {
    let n = tape.value(y).numel();
    let flat = tape.flatten(y)?;
    let mut r = rng(seed);
    let c = tape.constant(Tensor::from_vec(
        vec![n],
        (0..n).map(|_| r.random::<f64>() + 0.5).collect(),
    ));
    let prod = tape.mul(flat, c)?;
    tape.sum(prod)
}

// --- criterion 1: gradient suite ---

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_INSTANCES: u64 = 5;

/// Check one op builder over `FD_INSTANCES` random instances and fold the
/// worst error into `worst`.
fn sweep<G>(name: &str, worst: &mut f64, mut gen: G)
where
    G: FnMut(u64) -> (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[TensorId]) -> Result<TensorId, TapeError>>),
{
    for instance in 0..FD_INSTANCES {
        let (inputs, build) = gen(instance);
        let err = grad_check(|t, ids| build(t, ids), &inputs, FD_STEP)
            .unwrap_or_else(|e| panic!("criterion 1 FAIL — {name} instance {instance}: {e}"));
        assert!(
            err < FD_TOL,
            "criterion 1 (gradient suite): FAIL — {name} instance {instance} rel err {err:.3e}"
        );
        *worst = worst.max(err);
    }
}

#[test]
fn gradient_suite_covers_every_primitive_and_composite_head() {
    let start = Instant::now();
    let mut worst = 0.0f64;

    // Elementwise / shape primitives.
    sweep("add", &mut worst, |i| {
        let mut r = rng(100 + i);
        let a = smooth_tensor(vec![6], &mut r);
        let b = smooth_tensor(vec![6], &mut r);
        (vec![a, b], Box::new(move |t, ids| {
            let y = t.add(ids[0], ids[1])?;
            project(t, y, 1000 + i)
        }))
    });
    sweep("add_n", &mut worst, |i| {
        let mut r = rng(110 + i);
        let xs: Vec<Tensor> = (0..3).map(|_| smooth_tensor(vec![5], &mut r)).collect();
        (xs, Box::new(move |t, ids| {
            let y = t.add_n(ids)?;
            project(t, y, 1100 + i)
        }))
    });
    sweep("mul", &mut worst, |i| {
        let mut r = rng(120 + i);
        let a = smooth_tensor(vec![7], &mut r);
        let b = smooth_tensor(vec![7], &mut r);
        (vec![a, b], Box::new(move |t, ids| {
            let y = t.mul(ids[0], ids[1])?;
            project(t, y, 1200 + i)
        }))
    });
    sweep("scale", &mut worst, |i| {
        let mut r = rng(130 + i);
        let a = smooth_tensor(vec![8], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let y = t.scale(ids[0], 1.3 + i as f64)?;
            project(t, y, 1300 + i)
        }))
    });
    sweep("sum", &mut worst, |i| {
        let mut r = rng(140 + i);
        (vec![smooth_tensor(vec![9], &mut r)], Box::new(move |t, ids| t.sum(ids[0])))
    });
    sweep("mean", &mut worst, |i| {
        let mut r = rng(150 + i);
        (vec![smooth_tensor(vec![6], &mut r)], Box::new(move |t, ids| t.mean(ids[0])))
    });
    sweep("reshape", &mut worst, |i| {
        let mut r = rng(160 + i);
        let a = smooth_tensor(vec![2, 6], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let y = t.reshape(ids[0], vec![3, 4])?;
            project(t, y, 1600 + i)
        }))
    });
    sweep("flatten", &mut worst, |i| {
        let mut r = rng(170 + i);
        let a = smooth_tensor(vec![2, 2, 3], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let y = t.flatten(ids[0])?;
            project(t, y, 1700 + i)
        }))
    });
    sweep("gather", &mut worst, |i| {
        let mut r = rng(180 + i);
        let a = smooth_tensor(vec![10], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let y = t.gather(ids[0], &[0, 3, 3, 9, 5])?;
            project(t, y, 1800 + i)
        }))
    });

    // Linear algebra, activations, softmax, dropout.
    sweep("linear", &mut worst, |i| {
        let mut r = rng(200 + i);
        let w = smooth_tensor(vec![4, 5], &mut r);
        let x = smooth_tensor(vec![5], &mut r);
        let b = smooth_tensor(vec![4], &mut r);
        (vec![w, x, b], Box::new(move |t, ids| {
            let y = t.linear(ids[0], ids[1], Some(ids[2]))?;
            project(t, y, 2000 + i)
        }))
    });
    sweep("relu", &mut worst, |i| {
        let mut r = rng(210 + i);
        let a = smooth_tensor(vec![9], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let y = t.relu(ids[0])?;
            project(t, y, 2100 + i)
        }))
    });
    sweep("sigmoid", &mut worst, |i| {
        let mut r = rng(220 + i);
        let a = smooth_tensor(vec![9], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let y = t.sigmoid(ids[0])?;
            project(t, y, 2200 + i)
        }))
    });
    sweep("tanh", &mut worst, |i| {
        let mut r = rng(230 + i);
        let a = smooth_tensor(vec![9], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let y = t.tanh(ids[0])?;
            project(t, y, 2300 + i)
        }))
    });
    sweep("softmax", &mut worst, |i| {
        let mut r = rng(240 + i);
        let a = smooth_tensor(vec![7], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let y = t.softmax(ids[0])?;
            project(t, y, 2400 + i)
        }))
    });
    sweep("dropout", &mut worst, |i| {
        let mut r = rng(250 + i);
        let a = smooth_tensor(vec![12], &mut r);
        (vec![a], Box::new(move |t, ids| {
            let mut mask_rng = rng(2500 + i);
            let y = t.dropout(ids[0], 0.4, DropoutMode::Train, &mut mask_rng)?;
            project(t, y, 2501 + i)
        }))
    });

    // Convolutions and pooling.
    sweep("conv2d", &mut worst, |i| {
        let mut r = rng(300 + i);
        let x = smooth_tensor(vec![2, 5, 4], &mut r);
        let k = smooth_tensor(vec![3, 2, 3, 3], &mut r);
        let b = smooth_tensor(vec![3], &mut r);
        (vec![x, k, b], Box::new(move |t, ids| {
            let y = t.conv2d(ids[0], ids[1], ids[2])?;
            project(t, y, 3000 + i)
        }))
    });
    sweep("conv1x1", &mut worst, |i| {
        let mut r = rng(310 + i);
        let x = smooth_tensor(vec![3, 4, 4], &mut r);
        let k = smooth_tensor(vec![2, 3], &mut r);
        let b = smooth_tensor(vec![2], &mut r);
        (vec![x, k, b], Box::new(move |t, ids| {
            let y = t.conv1x1(ids[0], ids[1], ids[2])?;
            project(t, y, 3100 + i)
        }))
    });
    sweep("max_pool2x2", &mut worst, |i| {
        let mut r = rng(320 + i);
        let x = smooth_tensor(vec![2, 4, 6], &mut r);
        (vec![x], Box::new(move |t, ids| {
            let y = t.max_pool2x2(ids[0])?;
            project(t, y, 3200 + i)
        }))
    });
    sweep("global_avg_pool", &mut worst, |i| {
        let mut r = rng(330 + i);
        let x = smooth_tensor(vec![3, 4, 4], &mut r);
        (vec![x], Box::new(move |t, ids| {
            let y = t.global_avg_pool(ids[0])?;
            project(t, y, 3300 + i)
        }))
    });

    // Loss heads and reductions.
    sweep("squared_error_to", &mut worst, |i| {
        let mut r = rng(400 + i);
        let x = smooth_tensor(vec![6], &mut r);
        let target = smooth_values(6, &mut r);
        (vec![x], Box::new(move |t, ids| t.squared_error_to(ids[0], &target)))
    });
    sweep("smooth_l1_to", &mut worst, |i| {
        let mut r = rng(410 + i);
        // Residuals stay off the |d| = 1 kink because inputs avoid ±1
        // margins and the target is zero.
        let x = smooth_tensor(vec![6], &mut r);
        (vec![x], Box::new(move |t, ids| t.smooth_l1_to(ids[0], &[0.0; 6])))
    });
    sweep("bce_on_probs", &mut worst, |i| {
        let mut r = rng(420 + i);
        let p = Tensor::from_vec(vec![6], (0..6).map(|_| 0.1 + 0.8 * r.random::<f64>()).collect());
        let target: Vec<f64> = (0..6).map(|_| f64::from(r.random::<bool>())).collect();
        (vec![p], Box::new(move |t, ids| t.bce_on_probs(ids[0], &target)))
    });
    sweep("logistic_on_logits", &mut worst, |i| {
        let mut r = rng(430 + i);
        let x = smooth_tensor(vec![6], &mut r);
        let target: Vec<f64> = (0..6).map(|_| f64::from(r.random::<bool>())).collect();
        (vec![x], Box::new(move |t, ids| t.logistic_on_logits(ids[0], &target)))
    });
    sweep("max_over_first_l", &mut worst, |i| {
        let mut r = rng(440 + i);
        let xs: Vec<Tensor> = (0..3).map(|_| smooth_tensor(vec![5], &mut r)).collect();
        (xs, Box::new(move |t, ids| {
            let y = t.max_over_first_l(ids, 4)?;
            project(t, y, 4400 + i)
        }))
    });

    // Box heads.
    sweep("decode_box", &mut worst, |i| {
        let mut r = rng(500 + i);
        let d = Tensor::from_vec(vec![4], (0..4).map(|_| r.random::<f64>() * 1.6 - 0.8).collect());
        (vec![d], Box::new(move |t, ids| {
            let y = t.decode_box(ids[0], [20.0, 14.0, 8.0, 12.0], 4.0)?;
            project(t, y, 5000 + i)
        }))
    });
    sweep("clip_box", &mut worst, |i| {
        let mut r = rng(510 + i);
        let b = Tensor::from_vec(
            vec![4],
            vec![
                30.0 + r.random::<f64>() * 30.0,
                30.0 + r.random::<f64>() * 30.0,
                8.0 + r.random::<f64>() * 10.0,
                8.0 + r.random::<f64>() * 10.0,
            ],
        );
        (vec![b], Box::new(move |t, ids| {
            let y = t.clip_box(ids[0], 64.0, 64.0, 1e-3)?;
            project(t, y, 5100 + i)
        }))
    });
    sweep("bilinear_sample", &mut worst, |i| {
        let mut r = rng(520 + i);
        let feat = smooth_tensor(vec![2, 8, 8], &mut r);
        // Fractional box keeps sample points off the interpolation knots.
        let b = Tensor::from_vec(
            vec![4],
            vec![
                12.0 + r.random::<f64>() * 6.0 + 0.3,
                12.0 + r.random::<f64>() * 6.0 + 0.7,
                7.0 + r.random::<f64>() * 4.0 + 0.1,
                7.0 + r.random::<f64>() * 4.0 + 0.3,
            ],
        );
        (vec![feat, b], Box::new(move |t, ids| {
            let y = t.bilinear_sample(ids[0], ids[1], (3, 3), 4.0)?;
            project(t, y, 5200 + i)
        }))
    });

    // Composite head: full multi-label CNN loss through backbone, pool,
    // classifier and binary cross-entropy.
    let cnn_cfg = BackboneConfig { in_channels: 2, layer_channels: vec![2, 3], pool_after: vec![0] };
    sweep("multi_cnn_loss", &mut worst, |i| {
        let mut r = rng(600 + i);
        let image = smooth_tensor(vec![2, 8, 8], &mut r);
        let c0w = smooth_tensor(vec![2, 2, 3, 3], &mut r);
        let c0b = smooth_tensor(vec![2], &mut r);
        let c1w = smooth_tensor(vec![3, 2, 3, 3], &mut r);
        let c1b = smooth_tensor(vec![3], &mut r);
        let fcw = smooth_tensor(vec![4, 3], &mut r);
        let fcb = smooth_tensor(vec![4], &mut r);
        let truth: Vec<f64> = (0..4).map(|_| f64::from(r.random::<bool>())).collect();
        let cfg = cnn_cfg.clone();
        (
            vec![image, c0w, c0b, c1w, c1b, fcw, fcb],
            Box::new(move |t, ids| {
                let bound = BoundParams::from_ids(vec![
                    ("backbone.conv0.weight".into(), ids[1]),
                    ("backbone.conv0.bias".into(), ids[2]),
                    ("backbone.conv1.weight".into(), ids[3]),
                    ("backbone.conv1.bias".into(), ids[4]),
                    ("multicnn.fc.weight".into(), ids[5]),
                    ("multicnn.fc.bias".into(), ids[6]),
                ]);
                let mut drop_rng = rng(6000 + i);
                let scores =
                    multi_cnn_forward(t, &cfg, &bound, ids[0], 0.0, DropoutMode::Eval, &mut drop_rng)?;
                t.bce_on_probs(scores, &truth)
            }),
        )
    });

    // Composite head: localization loss through the proposal head (conv ->
    // relu -> 1x1 conv) over a sampled anchor batch with matched regions.
    let anchors = generate_anchors(2, 2, 4.0, &[6.0], &[1.0, 2.0]);
    sweep("localization_loss_head", &mut worst, |i| {
        let mut r = rng(700 + i);
        let feats = smooth_tensor(vec![2, 2, 2], &mut r);
        let hw = smooth_tensor(vec![3, 2, 3, 3], &mut r);
        let hb = smooth_tensor(vec![3], &mut r);
        let ow = smooth_tensor(vec![10, 3], &mut r);
        let ob = smooth_tensor(vec![10], &mut r);
        let batch = SampledBatch {
            positives: vec![
                PositiveSample { anchor: 2 * (i as usize % 2), matched_gt: Some(0) },
                PositiveSample { anchor: 5, matched_gt: Some(1) },
            ],
            negatives: vec![3, 6],
        };
        let gt = [
            BBox::new(2.5 + 0.2 * i as f64, 2.0, 6.0, 7.0),
            BBox::new(6.0, 5.5, 8.0, 5.0 + 0.3 * i as f64),
        ];
        let menu = anchors.clone();
        (
            vec![feats, hw, hb, ow, ob],
            Box::new(move |t, ids| {
                let bound = BoundParams::from_ids(vec![
                    ("rpn.hidden.weight".into(), ids[1]),
                    ("rpn.hidden.bias".into(), ids[2]),
                    ("rpn.out.weight".into(), ids[3]),
                    ("rpn.out.bias".into(), ids[4]),
                ]);
                let map = score_map(t, &bound, ids[0])?;
                localization_loss(t, map, &menu, &batch, &gt)
            }),
        )
    });

    // Composite head: a single LSTM step.
    sweep("lstm_step", &mut worst, |i| {
        let mut r = rng(800 + i);
        let (e, h) = (3, 4);
        let x = smooth_tensor(vec![e], &mut r);
        let h0 = smooth_tensor(vec![h], &mut r);
        let c0 = smooth_tensor(vec![h], &mut r);
        let mut tensors = vec![x, h0, c0];
        let mut names = Vec::new();
        for gate in ["i", "f", "o", "g"] {
            tensors.push(smooth_tensor(vec![h, e], &mut r));
            names.push(format!("lstm.{gate}.wx"));
            tensors.push(smooth_tensor(vec![h, h], &mut r));
            names.push(format!("lstm.{gate}.wh"));
            tensors.push(smooth_tensor(vec![h], &mut r));
            names.push(format!("lstm.{gate}.b"));
        }
        (
            tensors,
            Box::new(move |t, ids| {
                let bound = BoundParams::from_ids(
                    names.iter().cloned().zip(ids[3..].iter().copied()).collect(),
                );
                let (h_new, c_new) = lstm_step(t, &bound, ids[0], ids[1], ids[2])?;
                let ph = project(t, h_new, 8000 + i)?;
                let pc = project(t, c_new, 8001 + i)?;
                t.add(ph, pc)
            }),
        )
    });

    // Composite head: a two-step region unroll fused across two regions and
    // pushed through the softmax-vs-truth fusion loss.
    let lstm_cfg = LstmConfig { feat_dim: 5, embed: 3, hidden: 4, labels: 4 };
    sweep("two_step_unroll_fusion_loss", &mut worst, |i| {
        let mut r = rng(900 + i);
        let cfg = lstm_cfg.clone();
        let region_a = smooth_tensor(vec![cfg.feat_dim], &mut r);
        let region_b = smooth_tensor(vec![cfg.feat_dim], &mut r);
        let mut ps = ParamSet::new();
        let mut init_rng = rng(9000 + i);
        cfg.init_params(&mut ps, &mut init_rng);
        let names: Vec<String> = ps.iter().map(|(n, _)| n.to_string()).collect();
        let tensors: Vec<Tensor> = ps.iter().map(|(_, v)| v.clone()).collect();
        let mut inputs = vec![region_a, region_b];
        inputs.extend(tensors);
        let mut truth = vec![0.0; cfg.labels];
        truth[i as usize % cfg.labels] = 1.0;
        truth[(i as usize + 2) % cfg.labels] = 1.0;
        (
            inputs,
            Box::new(move |t, ids| {
                let bound = BoundParams::from_ids(
                    names.iter().cloned().zip(ids[2..].iter().copied()).collect(),
                );
                let mut un_rng = rng(9100 + i);
                let a = unroll_region(t, &bound, &cfg, ids[0], 2, 0.0, DropoutMode::Eval, &mut un_rng)?;
                let b = unroll_region(t, &bound, &cfg, ids[1], 2, 0.0, DropoutMode::Eval, &mut un_rng)?;
                let fused = fused_scores(t, &[a, b], cfg.labels)?;
                fusion_loss(t, fused, &truth)
            }),
        )
    });

    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() < 120,
        "criterion 1 (gradient suite): FAIL — took {:.1}s, budget is 120s",
        elapsed.as_secs_f64()
    );
    pass(
        1,
        "gradient suite",
        format!(
            "27 primitive and composite heads x {FD_INSTANCES} instances, worst rel err {worst:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

// --- criterion 2: geometry suite ---

#[test]
fn geometry_suite_round_trips_and_oracles() {
    // Delta encode/decode round trip.
    let mut r = rng(21);
    let mut worst_rt = 0.0f64;
    for _ in 0..200 {
        let anchor = BBox::new(
            r.random::<f64>() * 50.0 + 5.0,
            r.random::<f64>() * 50.0 + 5.0,
            2.0 + r.random::<f64>() * 20.0,
            2.0 + r.random::<f64>() * 20.0,
        );
        let gt = BBox::new(
            anchor.x + r.random::<f64>() * 8.0 - 4.0,
            anchor.y + r.random::<f64>() * 8.0 - 4.0,
            anchor.w * (0.5 + r.random::<f64>()),
            anchor.h * (0.5 + r.random::<f64>()),
        );
        let d = encode_deltas(&anchor, &gt).expect("positive extents");
        let back = decode_deltas(&anchor, &d, 8.0);
        for (a, b) in [(back.x, gt.x), (back.y, gt.y), (back.w, gt.w), (back.h, gt.h)] {
            worst_rt = worst_rt.max((a - b).abs());
        }
    }
    assert!(worst_rt < 1e-9, "criterion 2: FAIL — round-trip error {worst_rt:.2e}");

    // Smooth-L1 value and slope continuity at |x| = 1.
    let eps = 1e-7;
    let slope = |x: f64| (smooth_l1(x + eps) - smooth_l1(x - eps)) / (2.0 * eps);
    for x in [1.0f64, -1.0] {
        let jump = (smooth_l1(x + eps) - smooth_l1(x - eps)).abs();
        assert!(jump < 3.0 * eps, "criterion 2: FAIL — smooth-L1 value jump {jump:.2e} at {x}");
        let ds = (slope(x + 10.0 * eps) - slope(x - 10.0 * eps)).abs();
        assert!(ds < 1e-4, "criterion 2: FAIL — smooth-L1 slope jump {ds:.2e} at {x}");
    }

    // NMS pairwise-IoU bound on random proposal sets.
    let mut r = rng(22);
    for trial in 0..50 {
        let threshold = 0.3 + 0.4 * r.random::<f64>();
        let proposals: Vec<Proposal> = (0..40)
            .map(|_| Proposal {
                bbox: BBox::new(
                    r.random::<f64>() * 50.0,
                    r.random::<f64>() * 50.0,
                    2.0 + r.random::<f64>() * 25.0,
                    2.0 + r.random::<f64>() * 25.0,
                ),
                confidence: r.random::<f64>(),
            })
            .collect();
        let kept = nms(&proposals, 40, threshold);
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                let v = iou(&kept[i].bbox, &kept[j].bbox);
                assert!(
                    v <= threshold + 1e-12,
                    "criterion 2: FAIL — NMS trial {trial} kept a pair at IoU {v:.4} > {threshold:.4}"
                );
            }
        }
    }

    // Bilinear partition of unity: sampling a constant map returns the
    // constant for boxes whose sample points have all four neighbors.
    let mut r = rng(23);
    let mut worst_pu = 0.0f64;
    for _ in 0..50 {
        let c = r.random::<f64>() * 4.0 - 2.0;
        let mut tape = Tape::new();
        let feat = tape.leaf(Tensor::from_vec(vec![2, 8, 8], vec![c; 128]), false);
        // Stride 4 over an 8x8 map covers 32px; keep the box 1 cell inside.
        let bx = 10.0 + r.random::<f64>() * 12.0;
        let by = 10.0 + r.random::<f64>() * 12.0;
        let bw = 4.0 + r.random::<f64>() * 8.0;
        let bh = 4.0 + r.random::<f64>() * 8.0;
        let boxv = tape.leaf(Tensor::from_vec(vec![4], vec![bx, by, bw, bh]), false);
        let sampled = tape.bilinear_sample(feat, boxv, (3, 3), 4.0).unwrap();
        for v in &tape.value(sampled).data {
            worst_pu = worst_pu.max((v - c).abs());
        }
    }
    assert!(worst_pu < 1e-6, "criterion 2: FAIL — constant-map sampling off by {worst_pu:.2e}");

    // IoU against the grid-rasterization oracle.
    let mut r = rng(24);
    let mut worst_iou = 0.0f64;
    for _ in 0..100 {
        let mut draw = || {
            BBox::new(
                r.random::<f64>() * 40.0,
                r.random::<f64>() * 40.0,
                1.0 + r.random::<f64>() * 20.0,
                1.0 + r.random::<f64>() * 20.0,
            )
        };
        let (a, b) = (draw(), draw());
        let exact = iou(&a, &b);
        let approx = iou_rasterized(&a, &b, 1200);
        worst_iou = worst_iou.max((exact - approx).abs());
    }
    assert!(worst_iou < 1e-3, "criterion 2: FAIL — IoU vs rasterization off by {worst_iou:.2e}");

    pass(
        2,
        "geometry suite",
        format!(
            "round trip {worst_rt:.1e}, C1 smooth-L1, NMS bound on 50 sets, partition of unity {worst_pu:.1e}, IoU oracle {worst_iou:.1e} over 100 pairs"
        ),
    );
}

/// Count subpixel cell centers inside each box over the joint bounding
/// region.
fn iou_rasterized(a: &BBox, b: &BBox, cells: usize) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let (x1, y1) = (ax1.min(bx1), ay1.min(by1));
    let (x2, y2) = (ax2.max(bx2), ay2.max(by2));
    let (mut na, mut nb, mut ni) = (0u64, 0u64, 0u64);
    for i in 0..cells {
        let y = y1 + (i as f64 + 0.5) / cells as f64 * (y2 - y1);
        for j in 0..cells {
            let x = x1 + (j as f64 + 0.5) / cells as f64 * (x2 - x1);
            let ina = x > ax1 && x < ax2 && y > ay1 && y < ay2;
            let inb = x > bx1 && x < bx2 && y > by1 && y < by2;
            na += ina as u64;
            nb += inb as u64;
            ni += (ina && inb) as u64;
        }
    }
    let nu = na + nb - ni;
    if nu == 0 { 0.0 } else { ni as f64 / nu as f64 }
}

// --- criterion 3: fusion and metric oracles ---

/// Overall precision/recall by direct counting.
fn oracle_overall(records: &[EvalRecord], k: usize, threshold: f64) -> (f64, f64) {
    let (mut correct, mut predicted, mut truth) = (0usize, 0usize, 0usize);
    for r in records {
        let pred = top_k_predict(&r.scores, k, threshold);
        correct += pred.iter().filter(|l| r.truth.contains(l)).count();
        predicted += pred.len();
        truth += r.truth.len();
    }
    (
        if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 },
        if truth == 0 { 0.0 } else { correct as f64 / truth as f64 },
    )
}

/// Macro precision/recall by direct counting; classes without positives are
/// dropped from both averages.
fn oracle_per_class(records: &[EvalRecord], labels: usize, k: usize, threshold: f64) -> (f64, f64) {
    let (mut cp, mut cr, mut counted) = (0.0, 0.0, 0usize);
    for class in 0..labels {
        let mut np = 0usize;
        let mut ng = 0usize;
        let mut nc = 0usize;
        for r in records {
            let predicted = top_k_predict(&r.scores, k, threshold).contains(&class);
            let positive = r.truth.contains(&class);
            np += predicted as usize;
            ng += positive as usize;
            nc += (predicted && positive) as usize;
        }
        if ng == 0 {
            continue;
        }
        counted += 1;
        if np > 0 {
            cp += nc as f64 / np as f64;
        }
        cr += nc as f64 / ng as f64;
    }
    if counted == 0 { (0.0, 0.0) } else { (cp / counted as f64, cr / counted as f64) }
}

/// All-points AP by direct rank enumeration (ties by image id), truncated
/// to `limit` ranked images with the positive denominator capped at limit.
fn oracle_ap(records: &[EvalRecord], class: usize, limit: usize) -> Option<f64> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b].scores[class]
            .partial_cmp(&records[a].scores[class])
            .unwrap()
            .then(records[a].image_id.cmp(&records[b].image_id))
    });
    let positives = records.iter().filter(|r| r.truth.contains(&class)).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank0, &idx) in order.iter().take(limit).enumerate() {
        if records[idx].truth.contains(&class) {
            hits += 1;
            total += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Some(total / positives.min(limit) as f64)
}

fn fixture_record(image_id: usize, scores: Vec<f64>, truth: Vec<usize>) -> EvalRecord {
    EvalRecord { image_id, scores, truth, objects: None, image_size: (64.0, 64.0) }
}

#[test]
fn fusion_dominance_and_metrics_match_bruteforce_oracles() {
    // Max-pool fusion dominance: each fused score equals the grid maximum
    // and dominates every slot, on random grids.
    let mut r = rng(31);
    for _ in 0..50 {
        let regions = 1 + r.random_range(0..4);
        let steps = 1 + r.random_range(0..4);
        let labels = 2 + r.random_range(0..4);
        let mut tape = Tape::new();
        let unrolls: Vec<RegionUnroll> = (0..regions)
            .map(|_| {
                let len = 1 + r.random_range(0..steps);
                let probs: Vec<TensorId> = (0..len)
                    .map(|_| {
                        let row: Vec<f64> =
                            (0..labels + 1).map(|_| r.random::<f64>() + 1e-6).collect();
                        tape.leaf(Tensor::from_vec(vec![labels + 1], row), false)
                    })
                    .collect();
                RegionUnroll { labels: vec![0; probs.len()], probs, ended: false }
            })
            .collect();
        let grid = PredictionGrid::from_unrolls(&tape, &unrolls, steps, labels);
        let fused = max_pool_fusion(&grid);
        for l in 0..labels {
            let mut max_slot = 0.0f64;
            for m in 0..regions {
                for t in 0..steps {
                    let v = grid.get(m, t, l);
                    assert!(
                        fused[l] >= v,
                        "criterion 3: FAIL — fused[{l}] {} below grid slot {v}",
                        fused[l]
                    );
                    max_slot = max_slot.max(v);
                }
            }
            assert_eq!(fused[l], max_slot, "criterion 3: FAIL — fused is not the max");
        }
    }

    // The worked two-image fixture: predictions {A,C} vs truth {A,B} and
    // {A,B} vs truth {A} give overall precision 1/2 and recall 2/3.
    let worked = vec![
        fixture_record(0, vec![0.9, 0.1, 0.8], vec![0, 1]),
        fixture_record(1, vec![0.9, 0.6, 0.1], vec![0]),
    ];
    let report = MetricsReport::compute(&worked, 3, 2, 0.0).unwrap();
    assert!(
        (report.op - 0.5).abs() < 1e-12 && (report.or - 2.0 / 3.0).abs() < 1e-12,
        "criterion 3: FAIL — worked fixture gave op {} or {}",
        report.op,
        report.or
    );

    // Random fixtures (≤ 8 images, ≤ 5 classes): the reported metrics must
    // equal brute-force enumeration.
    let mut worst = 0.0f64;
    let mut r = rng(32);
    for trial in 0..60 {
        let images = 1 + r.random_range(0..8);
        let labels = 1 + r.random_range(0..5);
        let k = 1 + r.random_range(0..labels);
        let threshold = if r.random::<bool>() { 0.0 } else { 0.3 };
        let records: Vec<EvalRecord> = (0..images)
            .map(|id| {
                let scores: Vec<f64> = (0..labels).map(|_| r.random::<f64>()).collect();
                let mut truth: Vec<usize> = (0..labels).filter(|_| r.random::<bool>()).collect();
                if truth.is_empty() {
                    truth.push(r.random_range(0..labels));
                }
                fixture_record(id, scores, truth)
            })
            .collect();

        let report = MetricsReport::compute(&records, labels, k, threshold).unwrap();
        let (op, or) = oracle_overall(&records, k, threshold);
        let (cp, cr) = oracle_per_class(&records, labels, k, threshold);
        for (got, want, what) in [
            (report.op, op, "op"),
            (report.or, or, "or"),
            (report.cp, cp, "cp"),
            (report.cr, cr, "cr"),
        ] {
            let dev = (got - want).abs();
            worst = worst.max(dev);
            assert!(
                dev < 1e-12,
                "criterion 3: FAIL — trial {trial} {what} {got} vs oracle {want}"
            );
        }
        for class in 0..labels {
            for limit in [records.len(), k] {
                let got = average_precision_at(&records, class, limit);
                let want = oracle_ap(&records, class, limit);
                match (got, want) {
                    (None, None) => {}
                    (Some(g), Some(w)) => {
                        let dev = (g - w).abs();
                        worst = worst.max(dev);
                        assert!(
                            dev < 1e-12,
                            "criterion 3: FAIL — trial {trial} AP[{class}]@{limit} {g} vs {w}"
                        );
                    }
                    _ => panic!("criterion 3: FAIL — AP presence disagrees with oracle"),
                }
            }
        }
    }

    pass(
        3,
        "fusion and metric oracles",
        format!("dominance on 50 grids; worked fixture exact; 60 random fixtures vs brute force, worst dev {worst:.1e}"),
    );
}

// --- criterion 4: determinism ---

/// Sorted (relative path, bytes) listing of a directory tree.
fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn tiny_sets() -> Vec<String> {
    [
        "scene.classes=3",
        "scene.width=32",
        "scene.height=32",
        "scene.max_objects=2",
        "train.epochs=1",
        "train.loc_epochs=1",
        "train.lstm_epochs=1",
        "train.batch=2",
        "train.m=8",
        "train.t_max=2",
        "model.grid=3",
        "model.encoder_width=16",
        "model.embed=8",
        "model.hidden=12",
        "model.rpn_hidden=8",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn artifacts_are_bit_identical_across_same_seed_runs() {
    // gen-data: two runs into different directories must write identical
    // trees.
    let d1 = TempDir::new().unwrap();
    let d2 = TempDir::new().unwrap();
    for d in [&d1, &d2] {
        cmd_gen_data(&GenDataArgs {
            out: d.path().to_path_buf(),
            train: 6,
            test: 3,
            seed: Some(17),
            classes: None,
            config: None,
            set: tiny_sets(),
            force: false,
        })
        .unwrap();
    }
    let (t1, t2) = (tree_bytes(d1.path()), tree_bytes(d2.path()));
    assert_eq!(
        t1.iter().map(|(p, _)| p).collect::<Vec<_>>(),
        t2.iter().map(|(p, _)| p).collect::<Vec<_>>(),
        "criterion 4: FAIL — gen-data trees differ in file names"
    );
    for ((p, b1), (_, b2)) in t1.iter().zip(&t2) {
        assert_eq!(b1, b2, "criterion 4: FAIL — gen-data file {p} differs between runs");
    }

    // Every train regime, invoked twice with identical arguments, must
    // rewrite the same checkpoint and loss log; eval must rewrite the same
    // report and curves.
    let out = TempDir::new().unwrap();
    for model in ["multi-cnn", "cnn-lstm", "rlsd", "rlsd-ft-rpn"] {
        let ckpt = out.path().join(format!("{model}.ckpt"));
        let run_train = || {
            cmd_train(&TrainArgs {
                model: Some(model.into()),
                data: d1.path().to_path_buf(),
                out: ckpt.clone(),
                seed: Some(5),
                config: None,
                set: tiny_sets(),
            })
            .unwrap();
            (fs::read(&ckpt).unwrap(), fs::read(ckpt.with_extension("loss.csv")).unwrap())
        };
        let (ckpt_a, csv_a) = run_train();
        let (ckpt_b, csv_b) = run_train();
        assert_eq!(ckpt_a, ckpt_b, "criterion 4: FAIL — {model} checkpoints differ across reruns");
        assert_eq!(csv_a, csv_b, "criterion 4: FAIL — {model} loss logs differ across reruns");

        let report = out.path().join(format!("{model}.report.json"));
        let pr = out.path().join(format!("{model}.pr.csv"));
        let area = out.path().join(format!("{model}.area.csv"));
        let run_eval = || {
            cmd_eval(&EvalArgs {
                ckpt: ckpt.clone(),
                data: d1.path().to_path_buf(),
                split: "test".into(),
                k: 2,
                threshold: 0.5,
                out: Some(report.clone()),
                pr_class: Some("rect-red".into()),
                pr_out: pr.clone(),
                recall_area: true,
                recall_area_out: area.clone(),
            })
            .unwrap();
            (fs::read(&report).unwrap(), fs::read(&pr).unwrap(), fs::read(&area).unwrap())
        };
        let a = run_eval();
        let b = run_eval();
        assert_eq!(a, b, "criterion 4: FAIL — {model} eval artifacts differ across reruns");
    }

    pass(
        4,
        "determinism",
        "gen-data tree, all four train regimes, and eval reports are byte-identical across same-seed reruns".to_string(),
    );
}

// --- criteria 5-7: the shared desk-scale run ---

struct Scored {
    map: f64,
    small_recall: f64,
    secs: f64,
}

struct DeskRun {
    multi_cnn: Scored,
    cnn_lstm: Scored,
    rlsd: Scored,
    ft_rpn: Scored,
    loc_recall: f64,
    m: usize,
}

/// Fraction of (image, small-class) ground-truth pairs recovered by the
/// image's top-3 scores.
fn small_recall_at3(records: &[EvalRecord], small: &[usize]) -> f64 {
    let (mut total, mut hit) = (0usize, 0usize);
    for r in records {
        let predicted = top_k_predict(&r.scores, 3, 0.0);
        for label in &r.truth {
            if small.contains(label) {
                total += 1;
                hit += usize::from(predicted.contains(label));
            }
        }
    }
    hit as f64 / total.max(1) as f64
}

static DESK: LazyLock<DeskRun> = LazyLock::new(|| {
    let base = RunConfig::desk();
    let dir = TempDir::new().unwrap();
    generate_dataset(&base.scene, 2000, 500, dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    let small = base.scene.small_classes.clone();

    let mut loc_recall = None;
    let mut run = |model: &str| {
        let mut cfg = base.clone();
        cfg.apply("model", model).unwrap();
        let start = Instant::now();
        let outcome = train_model(&cfg, &ds).unwrap();
        let secs = start.elapsed().as_secs_f64();
        if let Some(recall) = outcome.proposal_recall {
            loc_recall.get_or_insert(recall);
        }
        let records = evaluate_split(&outcome.params, &cfg, cfg.model, &ds, Split::Test).unwrap();
        let report = MetricsReport::compute(&records, ds.classes(), 3, 0.5).unwrap();
        eprintln!(
            "desk run [{model}]: mAP {:.4}, small-object recall@3 {:.4}, {:.0}s",
            report.map,
            small_recall_at3(&records, &small),
            secs
        );
        Scored { map: report.map, small_recall: small_recall_at3(&records, &small), secs }
    };

    let multi_cnn = run("multi-cnn");
    let cnn_lstm = run("cnn-lstm");
    let rlsd = run("rlsd");
    let ft_rpn = run("rlsd-ft-rpn");
    DeskRun {
        multi_cnn,
        cnn_lstm,
        rlsd,
        ft_rpn,
        loc_recall: loc_recall.expect("the fused chains report localizer recall"),
        m: base.train.m,
    }
});

#[test]
fn desk_trend_orders_models_and_splits_small_objects() {
    let desk = &*DESK;
    for (name, scored) in [
        ("multi-cnn", &desk.multi_cnn),
        ("cnn-lstm", &desk.cnn_lstm),
        ("rlsd", &desk.rlsd),
    ] {
        assert!(
            scored.secs <= 1800.0,
            "criterion 5: FAIL — {name} took {:.0}s, budget is 1800s",
            scored.secs
        );
    }
    assert!(
        desk.rlsd.map >= desk.cnn_lstm.map,
        "criterion 5: FAIL — mAP(rlsd) {:.4} < mAP(cnn-lstm) {:.4}",
        desk.rlsd.map,
        desk.cnn_lstm.map
    );
    assert!(
        desk.cnn_lstm.map >= desk.multi_cnn.map - 0.01,
        "criterion 5: FAIL — mAP(cnn-lstm) {:.4} < mAP(multi-cnn) {:.4} - 0.01",
        desk.cnn_lstm.map,
        desk.multi_cnn.map
    );
    let gap = desk.rlsd.small_recall - desk.cnn_lstm.small_recall;
    assert!(
        gap >= 0.05,
        "criterion 5: FAIL — small-object recall@3 gap {:.4} (rlsd {:.4} vs cnn-lstm {:.4}) below 0.05",
        gap,
        desk.rlsd.small_recall,
        desk.cnn_lstm.small_recall
    );
    pass(
        5,
        "desk trend",
        format!(
            "mAP multi-cnn {:.3} ≤ cnn-lstm {:.3} ≤ rlsd {:.3} (+0.01 slack); small-object recall@3 gap {:+.3}; slowest model {:.0}s",
            desk.multi_cnn.map,
            desk.cnn_lstm.map,
            desk.rlsd.map,
            gap,
            desk.multi_cnn.secs.max(desk.cnn_lstm.secs).max(desk.rlsd.secs)
        ),
    );
}

#[test]
fn localizer_pretraining_reaches_region_recall() {
    let desk = &*DESK;
    assert_eq!(desk.m, 32, "criterion 6 measures recall at the desk proposal budget");
    assert!(
        desk.loc_recall >= 0.8,
        "criterion 6: FAIL — held-out proposal recall@{} = {:.4} below 0.8",
        desk.m,
        desk.loc_recall
    );
    pass(
        6,
        "localizer pretraining",
        format!("held-out region recall@{} = {:.3} (IoU ≥ 0.5 vs merged regions)", desk.m, desk.loc_recall),
    );
}

#[test]
fn finetuning_the_proposal_head_never_materially_hurts() {
    let desk = &*DESK;
    assert!(
        desk.ft_rpn.map >= desk.rlsd.map - 0.01,
        "criterion 7: FAIL — mAP(rlsd-ft-rpn) {:.4} < mAP(rlsd) {:.4} - 0.01",
        desk.ft_rpn.map,
        desk.rlsd.map
    );
    pass(
        7,
        "fine-tuned proposal head",
        format!("mAP rlsd-ft-rpn {:.3} vs rlsd {:.3} (-0.01 slack)", desk.ft_rpn.map, desk.rlsd.map),
    );
}

// --- criterion 8: sequence early-stop contract ---

#[test]
fn unrolls_halt_at_the_end_symbol_and_never_emit_it() {
    let mut meta = rng(88);
    let mut ended = 0usize;
    for draw in 0..1000u64 {
        let cfg = LstmConfig {
            feat_dim: 1 + meta.random_range(0..6),
            embed: 1 + meta.random_range(0..5),
            hidden: 1 + meta.random_range(0..8),
            labels: 1 + meta.random_range(0..6),
        };
        let t_max = 1 + meta.random_range(0..5);
        let mut ps = ParamSet::new();
        let mut init_rng = rng(10_000 + draw);
        cfg.init_params(&mut ps, &mut init_rng);
        // Zero-init biases rarely produce END early; spread all parameters
        // wider so every stopping behavior gets exercised.
        let mut spread = rng(20_000 + draw);
        let names: Vec<String> = ps.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = ps.get_mut(&name).unwrap();
            for v in &mut t.data {
                *v += spread.random::<f64>() * 2.0 - 1.0;
            }
        }

        let mut tape = Tape::new();
        let bound = rlsd::params::bind_frozen(&ps, &mut tape);
        let mut feat_rng = rng(30_000 + draw);
        let region = tape.leaf(
            Tensor::from_vec(
                vec![cfg.feat_dim],
                (0..cfg.feat_dim).map(|_| feat_rng.random::<f64>() * 2.0 - 1.0).collect(),
            ),
            false,
        );
        let mut step_rng = rng(40_000 + draw);
        let un = unroll_region(
            &mut tape,
            &bound,
            &cfg,
            region,
            t_max,
            0.0,
            DropoutMode::Eval,
            &mut step_rng,
        )
        .unwrap();

        assert!(
            un.probs.len() <= t_max,
            "criterion 8: FAIL — draw {draw} emitted {} steps past the cap {t_max}",
            un.probs.len()
        );
        assert!(
            un.labels.iter().all(|&l| l != cfg.end_index()),
            "criterion 8: FAIL — draw {draw} reported END as a label"
        );
        if un.ended {
            ended += 1;
            let last = tape.value(*un.probs.last().unwrap());
            let argmax = last
                .data
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(
                argmax,
                cfg.end_index(),
                "criterion 8: FAIL — draw {draw} flagged ended without END winning the last step"
            );
            assert_eq!(
                un.labels.len(),
                un.probs.len() - 1,
                "criterion 8: FAIL — draw {draw} kept a label for the END step"
            );
        } else {
            assert_eq!(
                un.probs.len(),
                t_max,
                "criterion 8: FAIL — draw {draw} stopped early without the ended flag"
            );
            assert_eq!(un.labels.len(), un.probs.len());
        }
    }
    assert!(
        ended > 0 && ended < 1000,
        "criterion 8: FAIL — degenerate sweep: {ended}/1000 unrolls ended early"
    );
    pass(
        8,
        "early-stop contract",
        format!("1000 random draws; {ended} stopped at END, none emitted it as a label"),
    );
}
