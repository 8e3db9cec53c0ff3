//! Box-coordinate ops that stay on the tape: anchor-delta decoding, image
//! clipping, and bilinear region sampling. Keeping these differentiable lets
//! a classification loss reach the proposal network through the sampled
//! region features and their box coordinates.
//!
//! Boxes on the tape are length-4 vectors `[x, y, w, h]` in center format,
//! image-pixel units.

use super::{Op, Tape, TapeError, Tensor, TensorId};

impl Tape {
    /// Shift-and-scale an anchor by predicted deltas `[tx, ty, tw, th]`:
    ///
    /// ```text
    /// bx = ax + tx * aw      bw = aw * exp(tw)
    /// by = ay + ty * ah      bh = ah * exp(th)
    /// ```
    ///
    /// `tw` and `th` are clamped to `[-clamp, clamp]` before the exp so a
    /// wild regression output cannot blow the box up to infinity.
    pub fn decode_box(
        &mut self,
        deltas: TensorId,
        anchor: [f64; 4],
        clamp: f64,
    ) -> Result<TensorId, TapeError> {
        self.check_id(deltas)?;
        if self.shape(deltas) != [4] {
            return Err(TapeError::BadShape {
                op: "decode_box",
                expected: "length-4 delta vector".into(),
                got: self.shape(deltas).to_vec(),
            });
        }
        let [ax, ay, aw, ah] = anchor;
        if aw <= 0.0 || ah <= 0.0 {
            return Err(TapeError::DegenerateBox { op: "decode_box", w: aw, h: ah });
        }
        let d = self.data(deltas);
        let (tx, ty, tw, th) = (d[0], d[1], d[2], d[3]);
        let out = vec![
            ax + tx * aw,
            ay + ty * ah,
            aw * tw.clamp(-clamp, clamp).exp(),
            ah * th.clamp(-clamp, clamp).exp(),
        ];
        let tracked = self.tracked(deltas);
        Ok(self.push(
            Tensor::from_vec(vec![4], out),
            tracked,
            Op::DecodeBox { deltas, anchor, clamp },
        ))
    }

    /// Clip a center-format box to the image rectangle `[0,w] x [0,h]`,
    /// enforcing a minimum extent so a fully off-screen box cannot collapse
    /// to zero width or height.
    pub fn clip_box(
        &mut self,
        input: TensorId,
        img_w: f64,
        img_h: f64,
        min_size: f64,
    ) -> Result<TensorId, TapeError> {
        self.check_id(input)?;
        if self.shape(input) != [4] {
            return Err(TapeError::BadShape {
                op: "clip_box",
                expected: "length-4 box vector".into(),
                got: self.shape(input).to_vec(),
            });
        }
        let d = self.data(input);
        let (x1, x2) = clip_pair(d[0], d[2], img_w);
        let (y1, y2) = clip_pair(d[1], d[3], img_h);
        let out = vec![
            0.5 * (x1 + x2),
            0.5 * (y1 + y2),
            (x2 - x1).max(min_size),
            (y2 - y1).max(min_size),
        ];
        let tracked = self.tracked(input);
        Ok(self.push(
            Tensor::from_vec(vec![4], out),
            tracked,
            Op::ClipBox { input, img_w, img_h, min_size },
        ))
    }

    /// Bilinearly sample a `grid = (rows, cols)` lattice of points placed at
    /// the cell centers of `boxv`, from a `[c, fh, fw]` feature map laid out
    /// at `stride` image pixels per feature cell. Sample positions are the
    /// image-pixel coordinates divided by `stride`; neighbors that fall
    /// outside the map contribute zero. Output is `[c, rows, cols]`.
    ///
    /// Gradients flow into both the feature map and the box coordinates.
    pub fn bilinear_sample(
        &mut self,
        feat: TensorId,
        boxv: TensorId,
        grid: (usize, usize),
        stride: f64,
    ) -> Result<TensorId, TapeError> {
        self.check_id(feat)?;
        self.check_id(boxv)?;
        let fs = self.shape(feat).to_vec();
        if fs.len() != 3 {
            return Err(TapeError::BadShape {
                op: "bilinear_sample",
                expected: "rank-3 feature map [c, h, w]".into(),
                got: fs,
            });
        }
        if self.shape(boxv) != [4] {
            return Err(TapeError::BadShape {
                op: "bilinear_sample",
                expected: "length-4 box vector".into(),
                got: self.shape(boxv).to_vec(),
            });
        }
        let (rows, cols) = grid;
        if rows == 0 || cols == 0 {
            return Err(TapeError::EmptyInput { op: "bilinear_sample" });
        }
        let b = self.data(boxv);
        let (bx, by, bw, bh) = (b[0], b[1], b[2], b[3]);
        if !(bw > 0.0 && bh > 0.0) {
            return Err(TapeError::DegenerateBox { op: "bilinear_sample", w: bw, h: bh });
        }
        let (c, fh, fw) = (fs[0], fs[1], fs[2]);
        let pts = sample_points(bx, by, bw, bh, rows, cols, stride);
        let fd = self.data(feat);
        let mut out = vec![0.0; c * rows * cols];
        for ch in 0..c {
            let plane = &fd[ch * fh * fw..(ch + 1) * fh * fw];
            let dst = &mut out[ch * rows * cols..(ch + 1) * rows * cols];
            for (cell, p) in pts.iter().enumerate() {
                let v = corners(p, fh, fw)
                    .iter()
                    .map(|&(iy, ix, wt)| match (iy, ix) {
                        (Some(iy), Some(ix)) => wt * plane[iy * fw + ix],
                        _ => 0.0,
                    })
                    .sum::<f64>();
                dst[cell] = v;
            }
        }
        let tracked = self.tracked(feat) || self.tracked(boxv);
        Ok(self.push(
            Tensor::from_vec(vec![c, rows, cols], out),
            tracked,
            Op::Bilinear { feat, boxv, stride },
        ))
    }
}

/// Clipped corner pair along one axis.
fn clip_pair(center: f64, extent: f64, limit: f64) -> (f64, f64) {
    let lo = (center - 0.5 * extent).clamp(0.0, limit);
    let hi = (center + 0.5 * extent).clamp(0.0, limit);
    (lo, hi)
}

struct SamplePoint {
    fx: f64,
    fy: f64,
    /// d(fx)/d(bw) and d(fy)/d(bh); the translations have derivative 1/stride.
    dfx_dbw: f64,
    dfy_dbh: f64,
}

fn sample_points(
    bx: f64,
    by: f64,
    bw: f64,
    bh: f64,
    rows: usize,
    cols: usize,
    stride: f64,
) -> Vec<SamplePoint> {
    let mut pts = Vec::with_capacity(rows * cols);
    for gy in 0..rows {
        let ry = (gy as f64 + 0.5) / rows as f64; // relative position in the box
        let py = (by - 0.5 * bh) + ry * bh;
        for gx in 0..cols {
            let rx = (gx as f64 + 0.5) / cols as f64;
            let px = (bx - 0.5 * bw) + rx * bw;
            pts.push(SamplePoint {
                fx: px / stride,
                fy: py / stride,
                dfx_dbw: (rx - 0.5) / stride,
                dfy_dbh: (ry - 0.5) / stride,
            });
        }
    }
    pts
}

type Corner = (Option<usize>, Option<usize>, f64);

/// The four bilinear neighbors of a sample point with their weights, in the
/// order (y0,x0) (y0,x1) (y1,x0) (y1,x1). Out-of-range coordinates become
/// `None`; their weight is still reported so weights always sum to 1.
fn corners(p: &SamplePoint, fh: usize, fw: usize) -> [Corner; 4] {
    let x0 = p.fx.floor();
    let y0 = p.fy.floor();
    let ax = p.fx - x0;
    let ay = p.fy - y0;
    let xi = |v: f64| -> Option<usize> {
        if v >= 0.0 && (v as usize) < fw {
            Some(v as usize)
        } else {
            None
        }
    };
    let yi = |v: f64| -> Option<usize> {
        if v >= 0.0 && (v as usize) < fh {
            Some(v as usize)
        } else {
            None
        }
    };
    [
        (yi(y0), xi(x0), (1.0 - ay) * (1.0 - ax)),
        (yi(y0), xi(x0 + 1.0), (1.0 - ay) * ax),
        (yi(y0 + 1.0), xi(x0), ay * (1.0 - ax)),
        (yi(y0 + 1.0), xi(x0 + 1.0), ay * ax),
    ]
}

pub(super) fn backward_decode_box(
    tape: &Tape,
    deltas: TensorId,
    anchor: [f64; 4],
    clamp: f64,
    g: &[f64],
    flow: &mut [Option<Vec<f64>>],
) {
    if !tape.tracked(deltas) {
        return;
    }
    let [_, _, aw, ah] = anchor;
    let d = tape.data(deltas);
    let (tw, th) = (d[2], d[3]);
    let mut dd = vec![0.0; 4];
    dd[0] = g[0] * aw;
    dd[1] = g[1] * ah;
    if tw.abs() < clamp {
        dd[2] = g[2] * aw * tw.exp();
    }
    if th.abs() < clamp {
        dd[3] = g[3] * ah * th.exp();
    }
    tape.bump(flow, deltas, &dd);
}

pub(super) fn backward_clip_box(
    tape: &Tape,
    input: TensorId,
    img_w: f64,
    img_h: f64,
    min_size: f64,
    g: &[f64],
    flow: &mut [Option<Vec<f64>>],
) {
    if !tape.tracked(input) {
        return;
    }
    let d = tape.data(input);
    let mut dd = vec![0.0; 4];
    // Per axis: corner indicators are 1 where the clamp is inactive.
    for (axis, limit) in [(0usize, img_w), (1usize, img_h)] {
        let center = d[axis];
        let extent = d[axis + 2];
        let lo_raw = center - 0.5 * extent;
        let hi_raw = center + 0.5 * extent;
        let i_lo = if lo_raw > 0.0 && lo_raw < limit { 1.0 } else { 0.0 };
        let i_hi = if hi_raw > 0.0 && hi_raw < limit { 1.0 } else { 0.0 };
        let (lo, hi) = clip_pair(center, extent, limit);
        let i_ext = if hi - lo > min_size { 1.0 } else { 0.0 };
        let g_center = g[axis];
        let g_extent = g[axis + 2];
        dd[axis] += g_center * 0.5 * (i_lo + i_hi) + g_extent * i_ext * (i_hi - i_lo);
        dd[axis + 2] +=
            g_center * 0.25 * (i_hi - i_lo) + g_extent * i_ext * 0.5 * (i_hi + i_lo);
    }
    tape.bump(flow, input, &dd);
}

pub(super) fn backward_bilinear(
    tape: &Tape,
    feat: TensorId,
    boxv: TensorId,
    stride: f64,
    out: usize,
    g: &[f64],
    flow: &mut [Option<Vec<f64>>],
) {
    let fs = tape.shape(feat);
    let (c, fh, fw) = (fs[0], fs[1], fs[2]);
    let os = &tape.nodes[out].value.shape;
    let (rows, cols) = (os[1], os[2]);
    let b = tape.data(boxv);
    let pts = sample_points(b[0], b[1], b[2], b[3], rows, cols, stride);
    let fd = tape.data(feat);
    let want_feat = tape.tracked(feat);
    let want_box = tape.tracked(boxv);
    let mut dfeat = if want_feat { vec![0.0; c * fh * fw] } else { Vec::new() };
    let mut dbox = [0.0; 4];
    for ch in 0..c {
        let plane = &fd[ch * fh * fw..(ch + 1) * fh * fw];
        let gplane = &g[ch * rows * cols..(ch + 1) * rows * cols];
        for (cell, p) in pts.iter().enumerate() {
            let gv = gplane[cell];
            if gv == 0.0 {
                continue;
            }
            let cs = corners(p, fh, fw);
            if want_feat {
                let dst = &mut dfeat[ch * fh * fw..(ch + 1) * fh * fw];
                for &(iy, ix, wt) in &cs {
                    if let (Some(iy), Some(ix)) = (iy, ix) {
                        dst[iy * fw + ix] += gv * wt;
                    }
                }
            }
            if want_box {
                let val = |corner: &Corner| -> f64 {
                    match (corner.0, corner.1) {
                        (Some(iy), Some(ix)) => plane[iy * fw + ix],
                        _ => 0.0,
                    }
                };
                let (v00, v01, v10, v11) = (val(&cs[0]), val(&cs[1]), val(&cs[2]), val(&cs[3]));
                let ay = p.fy - p.fy.floor();
                let ax = p.fx - p.fx.floor();
                let dv_dax = (1.0 - ay) * (v01 - v00) + ay * (v11 - v10);
                let dv_day = (1.0 - ax) * (v10 - v00) + ax * (v11 - v01);
                dbox[0] += gv * dv_dax / stride;
                dbox[1] += gv * dv_day / stride;
                dbox[2] += gv * dv_dax * p.dfx_dbw;
                dbox[3] += gv * dv_day * p.dfy_dbh;
            }
        }
    }
    if want_feat {
        tape.bump(flow, feat, &dfeat);
    }
    if want_box {
        tape.bump(flow, boxv, &dbox);
    }
}
