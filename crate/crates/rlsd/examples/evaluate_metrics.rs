//! The evaluation suite on hand-built records: top-k predictions, overall
//! and per-class precision/recall, all-points average precision, the PR
//! curve, and recall split by object size.

use rlsd::localizer::BBox;
use rlsd::metrics::{
    average_precision, pr_curve, recall_vs_area, top_k_predict, write_xy_csv, EvalRecord,
    MetricsReport,
};

fn rec(
    image_id: usize,
    scores: Vec<f64>,
    truth: Vec<usize>,
    objects: Vec<(usize, BBox)>,
) -> EvalRecord {
    EvalRecord { image_id, scores, truth, objects: Some(objects), image_size: (64.0, 64.0) }
}

fn main() -> anyhow::Result<()> {
    // Three images, three classes. Boxes come along so recall can be
    // broken down by object area.
    let records = vec![
        rec(
            0,
            vec![0.9, 0.2, 0.4],
            vec![0, 2],
            vec![(0, BBox::new(20.0, 20.0, 30.0, 28.0)), (2, BBox::new(50.0, 50.0, 9.0, 8.0))],
        ),
        rec(
            1,
            vec![0.3, 0.8, 0.1],
            vec![1],
            vec![(1, BBox::new(32.0, 30.0, 40.0, 36.0))],
        ),
        rec(
            2,
            vec![0.6, 0.7, 0.2],
            vec![0, 1],
            vec![(0, BBox::new(16.0, 40.0, 24.0, 20.0)), (1, BBox::new(44.0, 18.0, 10.0, 9.0))],
        ),
    ];

    // Predictions are the top-k scores above the threshold.
    for r in &records {
        println!(
            "image {}: scores {:?} -> top-2 predictions {:?} (truth {:?})",
            r.image_id,
            r.scores,
            top_k_predict(&r.scores, 2, 0.5),
            r.truth
        );
    }

    let report = MetricsReport::compute(&records, 3, 2, 0.5)?;
    println!("\noverall  P {:.3} R {:.3} F1 {:.3}", report.op, report.or, report.of1);
    println!("per-class P {:.3} R {:.3} F1 {:.3}", report.cp, report.cr, report.cf1);
    println!("mAP {:.3}, mAP@2 {:.3} ({} interpolation)", report.map, report.map_at_k, report.ap_interpolation);

    // AP per class is the area under the all-points PR curve over the
    // ranking of all images by that class score.
    for class in 0..3 {
        let ap = average_precision(&records, class).unwrap();
        let curve = pr_curve(&records, class);
        let pts: Vec<String> =
            curve.iter().map(|(r, p)| format!("({r:.2}, {p:.2})")).collect();
        println!("class {class}: AP {ap:.3}, PR curve {}", pts.join(" "));
    }

    // The PR curve serializes to the same x,y CSV every curve uses.
    let mut csv = Vec::new();
    write_xy_csv(&mut csv, &pr_curve(&records, 0))?;
    println!("\nclass-0 PR curve as CSV:\n{}", String::from_utf8(csv)?);

    // Recall by object size: small objects are the hard cases the fused
    // model exists for, so the suite reports them separately.
    let edges = [0.0, 0.05, 0.25, 1.0 + 1e-9];
    let bins = recall_vs_area(&records, 2, 0.5, &edges)?;
    for b in &bins {
        println!("area {:.2}..{:.2}: {} object(s), recall {:.3}", b.lo, b.hi, b.instances, b.recall);
    }
    Ok(())
}
