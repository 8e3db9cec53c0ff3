//! Train the plain multi-label CNN baseline end to end on a small synthetic
//! set and report the ranking metrics on held-out images.

use rlsd::config::{ModelKind, RunConfig};
use rlsd::metrics::MetricsReport;
use rlsd::synthdata::{generate_dataset, Split};
use rlsd::train::{evaluate_split, train_model, Dataset};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();

    let mut cfg = RunConfig::desk();
    for (key, value) in [
        ("model", "multi-cnn"),
        ("scene.classes", "6"),
        ("scene.seed", "21"),
        ("train.epochs", "6"),
        ("train.batch", "8"),
        ("train.seed", "2"),
    ] {
        cfg.apply(key, value)?;
    }

    let root = std::env::temp_dir().join("rlsd-example-multicnn");
    generate_dataset(&cfg.scene, 160, 40, &root)?;
    let ds = Dataset::load(&root)?;
    println!(
        "dataset: {} train / {} test, {} classes, {}x{} px",
        ds.train.len(),
        ds.test.len(),
        ds.classes(),
        cfg.scene.image_size.0,
        cfg.scene.image_size.1
    );

    let outcome = train_model(&cfg, &ds)?;
    let first = outcome.loss_log.first().unwrap().1;
    let last = outcome.loss_log.last().unwrap().1;
    println!("loss: {first:.4} -> {last:.4} over {} epochs", outcome.loss_log.len());

    let records = evaluate_split(&outcome.params, &cfg, ModelKind::MultiCnn, &ds, Split::Test)?;
    let report = MetricsReport::compute(&records, ds.classes(), 3, 0.5)?;
    println!("test split, top-{} predictions at threshold {}:", report.k, report.threshold);
    println!("  overall precision {:.3} / recall {:.3} / F1 {:.3}", report.op, report.or, report.of1);
    println!("  per-class precision {:.3} / recall {:.3} / F1 {:.3}", report.cp, report.cr, report.cf1);
    println!("  mAP {:.3}  (mAP@{} {:.3})", report.map, report.k, report.map_at_k);
    for (c, ap) in report.per_class_ap.iter().enumerate() {
        match ap {
            Some(ap) => println!("  AP[{}] = {ap:.3}", ds.manifest.class_names[c]),
            None => println!("  AP[{}] = n/a (no positives in split)", ds.manifest.class_names[c]),
        }
    }
    Ok(())
}
