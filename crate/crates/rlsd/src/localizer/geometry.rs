//! Pure box math shared by the sampler, the proposal head and the trainers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LocalizerError {
    #[error("encode_deltas: non-positive box extent w={w} h={h}")]
    NonPositiveExtent { w: f64, h: f64 },
}

/// A center-format bounding box in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    /// Corner representation `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.x - 0.5 * self.w,
            self.y - 0.5 * self.h,
            self.x + 0.5 * self.w,
            self.y + 0.5 * self.h,
        )
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox::new(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1)
    }

    pub fn area(&self) -> f64 {
        if self.w <= 0.0 || self.h <= 0.0 {
            0.0
        } else {
            self.w * self.h
        }
    }

    /// Tight box enclosing both.
    pub fn union_with(&self, other: &BBox) -> BBox {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        BBox::from_corners(ax1.min(bx1), ay1.min(by1), ax2.max(bx2), ay2.max(by2))
    }

    /// The full-image box.
    pub fn whole_image(img_w: f64, img_h: f64) -> BBox {
        BBox::new(0.5 * img_w, 0.5 * img_h, img_w, img_h)
    }

    /// Clip to the image rectangle. The result may be degenerate (zero
    /// extent) when the box lies entirely outside; callers filter those.
    pub fn clip(&self, img_w: f64, img_h: f64) -> BBox {
        let (x1, y1, x2, y2) = self.corners();
        BBox::from_corners(
            x1.clamp(0.0, img_w),
            y1.clamp(0.0, img_h),
            x2.clamp(0.0, img_w),
            y2.clamp(0.0, img_h),
        )
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Intersection over union. Degenerate boxes (non-positive extent) have
/// IoU 0 with everything.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Huber-style regression penalty: quadratic inside |d| < 1, linear outside,
/// continuous in value and slope at the joint.
pub fn smooth_l1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

/// Regression targets expressing `gt` relative to `anchor`:
/// translation in units of the anchor extent, log-scale for size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDeltas {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDeltas {
    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }
}

pub fn encode_deltas(anchor: &BBox, gt: &BBox) -> Result<BoxDeltas, LocalizerError> {
    if gt.w <= 0.0 || gt.h <= 0.0 {
        return Err(LocalizerError::NonPositiveExtent { w: gt.w, h: gt.h });
    }
    if anchor.w <= 0.0 || anchor.h <= 0.0 {
        return Err(LocalizerError::NonPositiveExtent { w: anchor.w, h: anchor.h });
    }
    Ok(BoxDeltas {
        tx: (gt.x - anchor.x) / anchor.w,
        ty: (gt.y - anchor.y) / anchor.h,
        tw: (gt.w / anchor.w).ln(),
        th: (gt.h / anchor.h).ln(),
    })
}

/// Inverse of [`encode_deltas`], with `tw`/`th` clamped to `[-clamp, clamp]`
/// before exponentiation.
pub fn decode_deltas(anchor: &BBox, d: &BoxDeltas, clamp: f64) -> BBox {
    BBox::new(
        anchor.x + d.tx * anchor.w,
        anchor.y + d.ty * anchor.h,
        anchor.w * d.tw.clamp(-clamp, clamp).exp(),
        anchor.h * d.th.clamp(-clamp, clamp).exp(),
    )
}
