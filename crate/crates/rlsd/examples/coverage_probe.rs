//! Scratch probe: desk-scale trend run across all four model regimes.

use rlsd::config::RunConfig;
use rlsd::metrics::{top_k_predict, MetricsReport};
use rlsd::synthdata::{generate_dataset, Split};
use rlsd::train::{evaluate_split, train_model, Dataset};
use std::time::Instant;

fn small_recall_at3(records: &[rlsd::metrics::EvalRecord], small: &[usize]) -> f64 {
    let mut total = 0usize;
    let mut hit = 0usize;
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

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let base = RunConfig::desk();
    let root = std::env::temp_dir().join("rlsd-desk-probe");
    if !root.join("manifest.json").exists() {
        generate_dataset(&base.scene, 2000, 500, &root)?;
    }
    let ds = Dataset::load(&root)?;
    let small = base.scene.small_classes.clone();

    for model in ["multi-cnn", "cnn-lstm", "rlsd", "rlsd-ft-rpn"] {
        let mut cfg = base.clone();
        cfg.apply("model", model)?;
        let t = Instant::now();
        let outcome = train_model(&cfg, &ds)?;
        let train_secs = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let records = evaluate_split(&outcome.params, &cfg, cfg.model, &ds, Split::Test)?;
        let eval_secs = t.elapsed().as_secs_f64();
        let report = MetricsReport::compute(&records, ds.classes(), 3, 0.5)?;
        let sr = small_recall_at3(&records, &small);
        println!(
            "RESULT {model}: mAP {:.4} smallR@3 {:.4} OP {:.3} OR {:.3} train {:.0}s eval {:.0}s locRecall {:?} losses {:?}",
            report.map,
            sr,
            report.op,
            report.or,
            train_secs,
            eval_secs,
            outcome.proposal_recall,
            outcome.loss_log.iter().map(|(_, l)| (l * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
    Ok(())
}
