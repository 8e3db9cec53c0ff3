//! The anchor menu: one box per (feature cell, scale, aspect ratio).

use super::geometry::BBox;

/// An anchor box plus where it came from: feature cell `(row, col)` and its
/// position in the scale x ratio shape menu.
#[derive(Debug, Clone, Copy)]
pub struct Anchor {
    pub bbox: BBox,
    pub cell: (usize, usize),
    pub shape_idx: usize,
}

/// Enumerate anchors over an `fh x fw` feature map with `stride` image
/// pixels per cell. Centers sit at `((col + 0.5) * stride, (row + 0.5) *
/// stride)`; a scale `s` with ratio `r` yields extent `w = s * sqrt(r)`,
/// `h = s / sqrt(r)`, so area is `s^2` at every ratio.
///
/// Order is cell row-major, then scale-major within the cell, matching the
/// channel layout of the proposal head: the anchor at global index
/// `(row * fw + col) * k + shape_idx` owns output channels
/// `5 * shape_idx .. 5 * shape_idx + 5` at `(row, col)`.
///
/// Anchors near the border may overhang the image; they are kept (decoded
/// proposals get clipped later).
pub fn generate_anchors(
    fh: usize,
    fw: usize,
    stride: f64,
    scales: &[f64],
    ratios: &[f64],
) -> Vec<Anchor> {
    let shapes: Vec<(f64, f64)> = scales
        .iter()
        .flat_map(|&s| ratios.iter().map(move |&r| (s * r.sqrt(), s / r.sqrt())))
        .collect();
    let mut out = Vec::with_capacity(fh * fw * shapes.len());
    for row in 0..fh {
        let cy = (row as f64 + 0.5) * stride;
        for col in 0..fw {
            let cx = (col as f64 + 0.5) * stride;
            for (shape_idx, &(w, h)) in shapes.iter().enumerate() {
                out.push(Anchor {
                    bbox: BBox::new(cx, cy, w, h),
                    cell: (row, col),
                    shape_idx,
                });
            }
        }
    }
    out
}
