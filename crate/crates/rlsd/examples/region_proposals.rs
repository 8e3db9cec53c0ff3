//! Train the region localizer alone on a tiny synthetic set, then walk one
//! test image through anchor decoding + NMS and compare the kept regions
//! against the (cluster-merged) ground-truth boxes.

use rlsd::localizer::{generate_anchors, iou, propose};
use rlsd::synthdata::Split;
use rlsd::train::{merged_regions, pretrain_localizer, proposal_recall, Dataset};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();

    let mut cfg = rlsd::config::RunConfig::desk();
    for (key, value) in [
        ("scene.classes", "3"),
        ("scene.width", "32"),
        ("scene.height", "32"),
        ("scene.max_objects", "2"),
        ("scene.seed", "11"),
        ("model.rpn_hidden", "16"),
        ("train.m", "8"),
        ("train.loc_epochs", "12"),
        ("train.batch", "4"),
        ("train.seed", "1"),
    ] {
        cfg.apply(key, value)?;
    }

    let root = std::env::temp_dir().join("rlsd-example-proposals");
    rlsd::synthdata::generate_dataset(&cfg.scene, 64, 8, &root)?;
    let ds = Dataset::load(&root)?;

    // The anchor menu the head scores: one set of shapes per feature cell.
    let side = cfg.dims.backbone.feature_side(32);
    let anchors = generate_anchors(
        side,
        side,
        cfg.dims.backbone.stride() as f64,
        &cfg.dims.anchor_scales,
        &cfg.dims.anchor_ratios,
    );
    println!(
        "feature map {side}x{side}, {} anchors ({} scales x {} ratios per cell)",
        anchors.len(),
        cfg.dims.anchor_scales.len(),
        cfg.dims.anchor_ratios.len()
    );

    let (params, losses) = pretrain_localizer(&cfg, &ds)?;
    for (i, l) in losses.iter().enumerate() {
        println!("epoch {}: localization loss {l:.4}", i + 1);
    }

    // Proposals for one held-out image. The list ends with the whole image
    // at confidence 1, so downstream stages always see at least one region.
    let sample = &ds.split(Split::Test)[0];
    let regions = propose(
        &params,
        &cfg.dims.backbone,
        &cfg.dims.anchor_scales,
        &cfg.dims.anchor_ratios,
        &sample.image,
        cfg.train.m,
        cfg.dims.nms_iou,
        cfg.dims.delta_clamp,
    )?;
    let truth = merged_regions(sample, cfg.dims.cluster_cutoff, ds.image_size());
    println!("\ntest[0]: {} merged truth box(es), {} proposals kept:", truth.len(), regions.len());
    for (i, p) in regions.iter().enumerate() {
        let best = truth
            .iter()
            .map(|t| iou(&p.bbox, t))
            .fold(0.0, f64::max);
        println!(
            "  #{i:<2} conf {:.3}  center ({:5.1}, {:5.1}) {:5.1}x{:<5.1}  best IoU vs truth {best:.2}",
            p.confidence, p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h
        );
    }

    let recall = proposal_recall(&params, &cfg, ds.split(Split::Test), ds.image_size(), 0.5)?;
    println!("\nheld-out recall@{} (IoU >= 0.5): {recall:.3}", cfg.train.m);
    Ok(())
}
