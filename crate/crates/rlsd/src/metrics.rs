//! Multi-label evaluation: top-k prediction, overall (micro) and per-class
//! (macro) precision/recall with F1, average precision and mAP/mAP@k over
//! image rankings, PR curves, and recall broken down by object box area.
//!
//! Everything is pure over immutable [`EvalRecord`]s. Score ties always
//! resolve by ascending image id so results are deterministic.

use crate::localizer::BBox;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no evaluation records")]
    NoRecords,
    #[error("record for image {image_id} carries no object boxes")]
    MissingBoxes { image_id: usize },
    #[error("area bin edges must be ascending with at least two entries, got {0:?}")]
    BadEdges(Vec<f64>),
}

/// One evaluated image: its score vector over the `L` real labels, the
/// ground-truth label set, and (optionally) the per-object boxes needed for
/// the area analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: usize,
    pub scores: Vec<f64>,
    /// Ground-truth label ids; non-empty and duplicate-free.
    pub truth: Vec<usize>,
    /// Per-object (label, box) pairs, when the dataset has boxes.
    pub objects: Option<Vec<(usize, BBox)>>,
    /// Image (width, height) in pixels, for area fractions.
    pub image_size: (f64, f64),
}

/// The `k` highest-scoring labels, filtered to scores strictly above
/// `threshold`; ties rank the lower label index first. May return fewer
/// than `k` labels.
pub fn top_k_predict(scores: &[f64], k: usize, threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut picked: Vec<usize> = order
        .into_iter()
        .take(k)
        .filter(|&i| scores[i] > threshold)
        .collect();
    picked.sort_unstable();
    picked
}

/// Micro-averaged precision and recall: correct, predicted, and
/// ground-truth label counts are summed over all images and classes before
/// dividing. Zero predictions give precision 0.
pub fn overall_pr(records: &[EvalRecord], k: usize, threshold: f64) -> (f64, f64) {
    let (mut correct, mut predicted, mut truth) = (0usize, 0usize, 0usize);
    for r in records {
        let pred = top_k_predict(&r.scores, k, threshold);
        correct += pred.iter().filter(|l| r.truth.contains(l)).count();
        predicted += pred.len();
        truth += r.truth.len();
    }
    let op = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    let or = if truth == 0 { 0.0 } else { correct as f64 / truth as f64 };
    (op, or)
}

/// Per-class counting for the macro averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub class: usize,
    pub correct: usize,
    pub predicted: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerClassPr {
    pub cp: f64,
    pub cr: f64,
    pub table: Vec<ClassCounts>,
    /// Classes with no ground-truth positives, excluded from both averages.
    pub excluded: Vec<usize>,
}

/// Macro-averaged precision and recall over classes that have at least one
/// ground-truth positive. A class never predicted contributes precision 0.
pub fn per_class_pr(
    records: &[EvalRecord],
    labels: usize,
    k: usize,
    threshold: f64,
) -> PerClassPr {
    let mut table: Vec<ClassCounts> = (0..labels)
        .map(|class| ClassCounts { class, correct: 0, predicted: 0, positives: 0 })
        .collect();
    for r in records {
        let pred = top_k_predict(&r.scores, k, threshold);
        for &l in &pred {
            table[l].predicted += 1;
            if r.truth.contains(&l) {
                table[l].correct += 1;
            }
        }
        for &l in &r.truth {
            table[l].positives += 1;
        }
    }
    let excluded: Vec<usize> =
        table.iter().filter(|c| c.positives == 0).map(|c| c.class).collect();
    let scored: Vec<&ClassCounts> = table.iter().filter(|c| c.positives > 0).collect();
    let (mut cp, mut cr) = (0.0, 0.0);
    if !scored.is_empty() {
        for c in &scored {
            if c.predicted > 0 {
                cp += c.correct as f64 / c.predicted as f64;
            }
            cr += c.correct as f64 / c.positives as f64;
        }
        cp /= scored.len() as f64;
        cr /= scored.len() as f64;
    }
    PerClassPr { cp, cr, table, excluded }
}

/// `2PR / (P + R)`, defined as 0 when both rates are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Image ranking for one class: indices into `records` by descending score,
/// ties by ascending image id.
fn class_ranking(records: &[EvalRecord], class: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b].scores[class]
            .partial_cmp(&records[a].scores[class])
            .unwrap()
            .then(records[a].image_id.cmp(&records[b].image_id))
    });
    order
}

/// All-points average precision of one class over the image ranking,
/// truncated to the `limit` highest-ranked images (pass `records.len()` for
/// no truncation; the positive count in the denominator is then capped at
/// `limit` too). `None` when the class has no positive image.
pub fn average_precision_at(
    records: &[EvalRecord],
    class: usize,
    limit: usize,
) -> Option<f64> {
    let positives = records.iter().filter(|r| r.truth.contains(&class)).count();
    if positives == 0 {
        return None;
    }
    let denom = positives.min(limit);
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank0, &idx) in class_ranking(records, class).iter().take(limit).enumerate() {
        if records[idx].truth.contains(&class) {
            hits += 1;
            ap += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Some(ap / denom as f64)
}

pub fn average_precision(records: &[EvalRecord], class: usize) -> Option<f64> {
    average_precision_at(records, class, records.len())
}

/// Mean AP over classes with positives, plus the per-class list (`None`
/// marks an excluded class). `limit = usize::MAX` gives plain mAP.
pub fn mean_ap_at(records: &[EvalRecord], labels: usize, limit: usize) -> (f64, Vec<Option<f64>>) {
    let per_class: Vec<Option<f64>> = (0..labels)
        .map(|c| average_precision_at(records, c, limit.min(records.len())))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (map, per_class)
}

pub fn mean_ap(records: &[EvalRecord], labels: usize) -> (f64, Vec<Option<f64>>) {
    mean_ap_at(records, labels, usize::MAX)
}

/// PR points for one class: one `(recall, precision)` point per distinct
/// score value, sweeping the threshold downward. Recall is non-decreasing
/// along the list.
pub fn pr_curve(records: &[EvalRecord], class: usize) -> Vec<(f64, f64)> {
    let order = class_ranking(records, class);
    let positives = records.iter().filter(|r| r.truth.contains(&class)).count();
    if positives == 0 {
        return Vec::new();
    }
    let mut points = Vec::new();
    let mut hits = 0usize;
    for (rank0, &idx) in order.iter().enumerate() {
        if records[idx].truth.contains(&class) {
            hits += 1;
        }
        let score = records[idx].scores[class];
        let next_same = order
            .get(rank0 + 1)
            .is_some_and(|&n| records[n].scores[class] == score);
        if !next_same {
            points.push((hits as f64 / positives as f64, hits as f64 / (rank0 + 1) as f64));
        }
    }
    points
}

/// Recall aggregated over ground-truth object instances falling into one
/// box-area band (as a fraction of image area).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaBin {
    pub lo: f64,
    pub hi: f64,
    pub instances: usize,
    pub recall: f64,
}

/// Bucket every ground-truth object by `box area / image area` using the
/// ascending `edges` (bin `i` spans `[edges[i], edges[i+1])`, the last bin
/// closed), then score each bin by the fraction of its instances whose
/// label made it into the image's predicted set.
pub fn recall_vs_area(
    records: &[EvalRecord],
    k: usize,
    threshold: f64,
    edges: &[f64],
) -> Result<Vec<AreaBin>, MetricsError> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::BadEdges(edges.to_vec()));
    }
    let bins = edges.len() - 1;
    let mut total = vec![0usize; bins];
    let mut hit = vec![0usize; bins];
    for r in records {
        let objects = r
            .objects
            .as_ref()
            .ok_or(MetricsError::MissingBoxes { image_id: r.image_id })?;
        let predicted = top_k_predict(&r.scores, k, threshold);
        let image_area = r.image_size.0 * r.image_size.1;
        for (label, bbox) in objects {
            let frac = bbox.area() / image_area;
            let Some(b) = bin_of(frac, edges) else { continue };
            total[b] += 1;
            if predicted.contains(label) {
                hit[b] += 1;
            }
        }
    }
    Ok((0..bins)
        .map(|b| AreaBin {
            lo: edges[b],
            hi: edges[b + 1],
            instances: total[b],
            recall: if total[b] == 0 { 0.0 } else { hit[b] as f64 / total[b] as f64 },
        })
        .collect())
}

fn bin_of(frac: f64, edges: &[f64]) -> Option<usize> {
    let last = edges.len() - 1;
    for b in 0..last {
        let closed_top = b + 1 == last;
        if frac >= edges[b] && (frac < edges[b + 1] || (closed_top && frac <= edges[b + 1])) {
            return Some(b);
        }
    }
    None
}

/// The full evaluation summary, serializable as a structured report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub threshold: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub map: f64,
    pub map_at_k: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub classes_without_positives: Vec<usize>,
    /// How AP integrates the PR curve; always the continuous form.
    pub ap_interpolation: String,
}

impl MetricsReport {
    pub fn compute(
        records: &[EvalRecord],
        labels: usize,
        k: usize,
        threshold: f64,
    ) -> Result<MetricsReport, MetricsError> {
        if records.is_empty() {
            return Err(MetricsError::NoRecords);
        }
        let (op, or) = overall_pr(records, k, threshold);
        let pc = per_class_pr(records, labels, k, threshold);
        let (map, per_class_ap) = mean_ap(records, labels);
        let (map_at_k, _) = mean_ap_at(records, labels, k);
        Ok(MetricsReport {
            k,
            threshold,
            op,
            or,
            of1: f1(op, or),
            cp: pc.cp,
            cr: pc.cr,
            cf1: f1(pc.cp, pc.cr),
            map,
            map_at_k,
            per_class_ap,
            classes_without_positives: pc.excluded,
            ap_interpolation: "all-points".to_string(),
        })
    }
}

/// Write `(x, y)` points as CSV: header `x,y`, six decimal digits.
pub fn write_xy_csv(mut w: impl Write, points: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "x,y")?;
    for (x, y) in points {
        writeln!(w, "{x:.6},{y:.6}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(image_id: usize, scores: Vec<f64>, truth: Vec<usize>) -> EvalRecord {
        EvalRecord { image_id, scores, truth, objects: None, image_size: (64.0, 64.0) }
    }

    #[test]
    fn top_k_composes_rank_and_threshold() {
        assert_eq!(top_k_predict(&[0.9, 0.6, 0.4, 0.1], 3, 0.5), vec![0, 1]);
        assert_eq!(top_k_predict(&[0.9, 0.6, 0.4, 0.1], 2, 0.0), vec![0, 1]);
        // Ties break to the lower index.
        assert_eq!(top_k_predict(&[0.5, 0.5, 0.5], 2, 0.0), vec![0, 1]);
        assert_eq!(top_k_predict(&[0.1, 0.2], 2, 0.5), Vec::<usize>::new());
    }

    /// Two images: truth {A,B} predicted {A,C}; truth {A} predicted {A,B}.
    fn worked_fixture() -> Vec<EvalRecord> {
        vec![
            record(0, vec![0.9, 0.1, 0.8], vec![0, 1]),
            record(1, vec![0.95, 0.7, 0.2], vec![0]),
        ]
    }

    #[test]
    fn overall_pr_matches_the_worked_fixture() {
        let (op, or) = overall_pr(&worked_fixture(), 2, 0.5);
        assert_eq!(op, 0.5);
        assert!((or - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn per_class_pr_matches_the_worked_fixture() {
        // Class 0: predicted twice, correct twice, 2 positives -> P=R=1.
        // Class 1: predicted once (wrong image), 1 positive   -> P=R=0.
        // Class 2: predicted once, no positives -> excluded and flagged.
        let pc = per_class_pr(&worked_fixture(), 3, 2, 0.5);
        assert_eq!(pc.excluded, vec![2]);
        assert_eq!(pc.cp, 0.5);
        assert_eq!(pc.cr, 0.5);
        assert_eq!(
            pc.table[0],
            ClassCounts { class: 0, correct: 2, predicted: 2, positives: 2 }
        );
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let records = vec![
            record(0, vec![0.9, 0.8, 0.0], vec![0, 1]),
            record(1, vec![0.0, 0.9, 0.0], vec![1]),
        ];
        let (op, or) = overall_pr(&records, 2, 0.0);
        // k=2 predicts a second label for image 1, so cap k per image at the
        // truth size instead for an exact check.
        assert!(op > 0.0 && or == 1.0);
        let (op1, or1) = overall_pr(&records[1..], 1, 0.0);
        assert_eq!((op1, or1), (1.0, 1.0));
    }

    #[test]
    fn ap_fixture_positives_at_ranks_one_and_three() {
        let records = vec![
            record(0, vec![0.9], vec![0]),
            record(1, vec![0.8], vec![9999]), // negative for class 0
            record(2, vec![0.7], vec![0]),
        ];
        // `truth` entries beyond the score length are fine for AP, which
        // only asks set membership.
        let ap = average_precision(&records, 0).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ap_ties_rank_the_lower_image_id_first() {
        let records = vec![
            record(0, vec![0.5], vec![1]), // negative, same score
            record(1, vec![0.5], vec![0]), // positive
        ];
        let ap = average_precision(&records, 0).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn ap_none_when_class_has_no_positives() {
        let records = vec![record(0, vec![0.9, 0.1], vec![0])];
        assert_eq!(average_precision(&records, 1), None);
        let (_, per_class) = mean_ap(&records, 2);
        assert_eq!(per_class[1], None);
    }

    /// Recompute AP by brute force at every rank, over random fixtures of
    /// up to 8 images, and demand exact agreement.
    #[test]
    fn ap_equals_brute_force_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let n = rng.random_range(1..=8usize);
            let records: Vec<EvalRecord> = (0..n)
                .map(|i| {
                    // Coarse scores force plenty of ties.
                    let s = (rng.random_range(0..5) as f64) / 4.0;
                    let truth = if rng.random_bool(0.5) { vec![0] } else { vec![1] };
                    record(i, vec![s], truth)
                })
                .collect();
            let positives: Vec<usize> =
                (0..n).filter(|&i| records[i].truth.contains(&0)).collect();
            if positives.is_empty() {
                assert_eq!(average_precision(&records, 0), None);
                continue;
            }
            // Oracle: explicit sort, then precision recomputed from scratch
            // by counting hits among the first r entries for each rank r.
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                records[b].scores[0]
                    .partial_cmp(&records[a].scores[0])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut total = 0.0;
            for r in 1..=n {
                let hit_now = records[order[r - 1]].truth.contains(&0);
                if hit_now {
                    let hits: usize = order[..r]
                        .iter()
                        .filter(|&&i| records[i].truth.contains(&0))
                        .count();
                    total += hits as f64 / r as f64;
                }
            }
            let want = total / positives.len() as f64;
            let got = average_precision(&records, 0).unwrap();
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn map_at_k_truncates_and_caps_positives() {
        let records = vec![
            record(0, vec![0.9], vec![0]),
            record(1, vec![0.8], vec![9999]),
            record(2, vec![0.7], vec![0]),
        ];
        // Top-2 keeps the rank-1 positive only; denominator min(2, 2) = 2.
        let (ap2, _) = mean_ap_at(&records, 1, 2);
        assert_eq!(ap2, 0.5);
        // k >= dataset size leaves mAP unchanged.
        let (apk, _) = mean_ap_at(&records, 1, 10);
        let (ap, _) = mean_ap(&records, 1);
        assert_eq!(apk, ap);
    }

    #[test]
    fn four_image_two_class_map_by_enumeration() {
        let records = vec![
            record(0, vec![0.9, 0.2], vec![0]),
            record(1, vec![0.7, 0.8], vec![1]),
            record(2, vec![0.8, 0.6], vec![0, 1]),
            record(3, vec![0.1, 0.7], vec![9999]),
        ];
        // Class 0 ranking: 0(+), 2(+), 1(-), 3(-) -> AP = (1 + 1)/2 = 1.
        // Class 1 ranking: 1(+), 3(-), 2(+), 0(-) -> AP = (1 + 2/3)/2 = 5/6.
        let (map, per_class) = mean_ap(&records, 2);
        assert_eq!(per_class[0], Some(1.0));
        assert!((per_class[1].unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!((map - (1.0 + 5.0 / 6.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn pr_curve_passes_through_one_one_under_perfect_separation() {
        let records = vec![
            record(0, vec![0.9], vec![0]),
            record(1, vec![0.8], vec![0]),
            record(2, vec![0.2], vec![9999]),
        ];
        let curve = pr_curve(&records, 0);
        assert!(curve.contains(&(1.0, 1.0)));
        let recalls: Vec<f64> = curve.iter().map(|p| p.0).collect();
        assert!(recalls.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pr_curve_merges_tied_scores_into_one_point() {
        let records = vec![
            record(0, vec![0.5], vec![0]),
            record(1, vec![0.5], vec![9999]),
        ];
        assert_eq!(pr_curve(&records, 0), vec![(1.0, 0.5)]);
    }

    #[test]
    fn pr_curve_precision_approaches_base_rate_on_random_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let records: Vec<EvalRecord> = (0..10_000)
            .map(|i| {
                let truth = if rng.random_bool(0.5) { vec![0] } else { vec![1] };
                record(i, vec![rng.random::<f64>()], truth)
            })
            .collect();
        let curve = pr_curve(&records, 0);
        let last = curve.last().unwrap();
        assert_eq!(last.0, 1.0);
        assert!((last.1 - 0.5).abs() < 0.05, "final precision {}", last.1);
    }

    #[test]
    fn recall_vs_area_separates_small_and_large_objects() {
        let small = BBox::new(10.0, 10.0, 8.0, 8.0); // 64/4096 ~ 1.6%
        let large = BBox::new(32.0, 32.0, 40.0, 30.0); // 1200/4096 ~ 29%
        let records = vec![EvalRecord {
            image_id: 0,
            scores: vec![0.9, 0.1], // predicts label 0 only
            truth: vec![0, 1],
            objects: Some(vec![(1, small), (1, small), (0, large), (0, large)]),
            image_size: (64.0, 64.0),
        }];
        let bins = recall_vs_area(&records, 3, 0.5, &[0.0, 0.1, 1.0]).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!((bins[0].instances, bins[0].recall), (2, 0.0));
        assert_eq!((bins[1].instances, bins[1].recall), (2, 1.0));
    }

    #[test]
    fn recall_vs_area_requires_boxes() {
        let records = vec![record(7, vec![0.9], vec![0])];
        let err = recall_vs_area(&records, 3, 0.5, &[0.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("image 7"));
    }

    #[test]
    fn report_assembles_all_fields() {
        let report = MetricsReport::compute(&worked_fixture(), 3, 2, 0.5).unwrap();
        assert_eq!(report.op, 0.5);
        assert!((report.or - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.classes_without_positives, vec![2]);
        assert_eq!(report.ap_interpolation, "all-points");
        let of1 = 2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0);
        assert!((report.of1 - of1).abs() < 1e-12);
        // Round trip through the serialized form.
        let text = serde_json::to_string_pretty(&report).unwrap();
        let back: MetricsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.map, report.map);
    }

    #[test]
    fn csv_points_use_six_decimals() {
        let mut out = Vec::new();
        write_xy_csv(&mut out, &[(0.5, 1.0 / 3.0)]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,y\n0.500000,0.333333\n");
    }

    proptest! {
        /// With no threshold, growing k can only add predictions, so micro
        /// recall never drops.
        #[test]
        fn recall_is_monotone_in_k(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let records: Vec<EvalRecord> = (0..6)
                .map(|i| {
                    let scores: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
                    let mut truth: Vec<usize> =
                        (0..5).filter(|_| rng.random_bool(0.4)).collect();
                    if truth.is_empty() {
                        truth.push(rng.random_range(0..5));
                    }
                    record(i, scores, truth)
                })
                .collect();
            let mut prev = 0.0;
            for k in 1..=5 {
                let (_, or) = overall_pr(&records, k, 0.0);
                prop_assert!(or >= prev - 1e-12);
                prev = or;
            }
        }

        /// Relabeling classes consistently leaves the micro rates unchanged.
        #[test]
        fn overall_rates_are_permutation_invariant(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = 4usize;
            let perm = [2usize, 0, 3, 1];
            let records: Vec<EvalRecord> = (0..5)
                .map(|i| {
                    let scores: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
                    let mut truth: Vec<usize> =
                        (0..l).filter(|_| rng.random_bool(0.5)).collect();
                    if truth.is_empty() {
                        truth.push(rng.random_range(0..l));
                    }
                    record(i, scores, truth)
                })
                .collect();
            let permuted: Vec<EvalRecord> = records
                .iter()
                .map(|r| {
                    let mut scores = vec![0.0; l];
                    for (from, &to) in perm.iter().enumerate() {
                        scores[to] = r.scores[from];
                    }
                    let truth: Vec<usize> = r.truth.iter().map(|&t| perm[t]).collect();
                    record(r.image_id, scores, truth)
                })
                .collect();
            let a = overall_pr(&records, 2, 0.3);
            let b = overall_pr(&permuted, 2, 0.3);
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }
}
