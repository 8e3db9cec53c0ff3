//! Ground-truth region construction: merge object boxes whose centers sit
//! close together into one multi-label region.

use super::geometry::BBox;

/// Single-linkage clustering on box centers, cut at `cutoff` (Euclidean
/// pixels, inclusive): two boxes land in one cluster iff a chain of
/// center-distance <= cutoff hops connects them. Each cluster becomes the
/// tight box enclosing its members.
///
/// Output order follows the smallest member index of each cluster, so the
/// result is deterministic for a given input order.
pub fn cluster_merge_boxes(boxes: &[BBox], cutoff: f64) -> Vec<BBox> {
    let n = boxes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in i + 1..n {
            if boxes[i].center_distance(&boxes[j]) <= cutoff {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    let (lo, hi) = (ri.min(rj), ri.max(rj));
                    parent[hi] = lo;
                }
            }
        }
    }
    let mut merged: Vec<(usize, BBox)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match merged.iter_mut().find(|(r, _)| *r == root) {
            Some((_, acc)) => *acc = acc.union_with(&boxes[i]),
            None => merged.push((root, boxes[i])),
        }
    }
    merged.into_iter().map(|(_, b)| b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearby_boxes_merge_into_enclosing_region() {
        // Two 4x4 boxes whose centers are 2 px apart, cutoff 10.
        let a = BBox::new(10.0, 10.0, 4.0, 4.0);
        let b = BBox::new(12.0, 10.0, 4.0, 4.0);
        let merged = cluster_merge_boxes(&[a, b], 10.0);
        assert_eq!(merged.len(), 1);
        let m = merged[0];
        // Enclosing box spans x in [8, 14], y in [8, 12].
        assert_eq!((m.x, m.y, m.w, m.h), (11.0, 10.0, 6.0, 4.0));
    }

    #[test]
    fn chains_link_transitively_but_distant_boxes_stay_apart() {
        let boxes = [
            BBox::new(0.0, 0.0, 2.0, 2.0),
            BBox::new(3.0, 0.0, 2.0, 2.0),
            BBox::new(50.0, 0.0, 2.0, 2.0),
        ];
        let merged = cluster_merge_boxes(&boxes, 10.0);
        assert_eq!(merged.len(), 2);
        // First cluster listed first (smallest member index).
        assert_eq!(merged[0].x, 1.5);
        assert_eq!(merged[1].x, 50.0);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        assert!(cluster_merge_boxes(&[], 5.0).is_empty());
    }

    #[test]
    fn single_box_passes_through() {
        let b = BBox::new(7.0, 9.0, 3.0, 5.0);
        assert_eq!(cluster_merge_boxes(&[b], 1.0), vec![b]);
    }

    proptest! {
        #[test]
        fn merged_regions_contain_their_members(
            coords in proptest::collection::vec((0.0..60.0f64, 0.0..60.0f64, 1.0..10.0f64, 1.0..10.0f64), 1..8),
            cutoff in 1.0..40.0f64,
        ) {
            let boxes: Vec<BBox> =
                coords.iter().map(|&(x, y, w, h)| BBox::new(x, y, w, h)).collect();
            let merged = cluster_merge_boxes(&boxes, cutoff);
            prop_assert!(merged.len() <= boxes.len());
            for b in &boxes {
                let (x1, y1, x2, y2) = b.corners();
                let covered = merged.iter().any(|m| {
                    let (mx1, my1, mx2, my2) = m.corners();
                    mx1 <= x1 + 1e-9 && my1 <= y1 + 1e-9 && mx2 >= x2 - 1e-9 && my2 >= y2 - 1e-9
                });
                prop_assert!(covered, "box {b:?} not inside any merged region");
            }
        }
    }
}
