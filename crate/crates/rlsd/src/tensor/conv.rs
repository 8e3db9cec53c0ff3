//! Spatial ops: 3x3 same-padding convolution, 1x1 convolution, 2x2 max
//! poolingable and global average pooling. Layout is channel-major `[c, h, w]`.
//!
//! The 3x3 convolution is written as nine shifted row AXPYs per
//! (out-channel, in-channel) pair instead of an im2col buffer; the inner
//! loops run over contiguous row slices, which is what the optimizer needs
//! to vectorize them.

use super::{Op, Tape, TapeError, Tensor, TensorId};

impl Tape {
    /// 3x3 convolution, stride 1, zero padding 1: `[ci,h,w] -> [co,h,w]`.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        k: TensorId,
        b: TensorId,
    ) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        self.check_id(k)?;
        self.check_id(b)?;
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 3 {
            return Err(TapeError::BadShape {
                op: "conv2d",
                expected: "rank-3 input [c, h, w]".into(),
                got: xs,
            });
        }
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 || ks[1] != xs[0] {
            return Err(TapeError::ShapeMismatch { op: "conv2d", lhs: ks, rhs: xs });
        }
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let co = ks[0];
        if self.shape(b) != [co] {
            return Err(TapeError::ShapeMismatch {
                op: "conv2d",
                lhs: vec![co],
                rhs: self.shape(b).to_vec(),
            });
        }
        let xd = self.data(x);
        let kd = self.data(k);
        let bd = self.data(b);
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            let plane = &mut out[o * h * w..(o + 1) * h * w];
            plane.fill(bd[o]);
            for i in 0..ci {
                let xplane = &xd[i * h * w..(i + 1) * h * w];
                let kbase = (o * ci + i) * 9;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let kv = kd[kbase + ky * 3 + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        shifted_axpy(plane, xplane, kv, h, w, ky, kx);
                    }
                }
            }
        }
        let tracked = self.tracked(x) || self.tracked(k) || self.tracked(b);
        Ok(self.push(Tensor::from_vec(vec![co, h, w], out), tracked, Op::Conv2d { x, k, b }))
    }

    /// 1x1 convolution (a per-pixel linear map): `[ci,h,w] -> [co,h,w]`.
    pub fn conv1x1(
        &mut self,
        x: TensorId,
        k: TensorId,
        b: TensorId,
    ) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        self.check_id(k)?;
        self.check_id(b)?;
        let xs = self.shape(x).to_vec();
        let ks = self.shape(k).to_vec();
        if xs.len() != 3 {
            return Err(TapeError::BadShape {
                op: "conv1x1",
                expected: "rank-3 input [c, h, w]".into(),
                got: xs,
            });
        }
        if ks.len() != 2 || ks[1] != xs[0] {
            return Err(TapeError::ShapeMismatch { op: "conv1x1", lhs: ks, rhs: xs });
        }
        let (ci, h, w) = (xs[0], xs[1], xs[2]);
        let co = ks[0];
        if self.shape(b) != [co] {
            return Err(TapeError::ShapeMismatch {
                op: "conv1x1",
                lhs: vec![co],
                rhs: self.shape(b).to_vec(),
            });
        }
        let hw = h * w;
        let xd = self.data(x);
        let kd = self.data(k);
        let bd = self.data(b);
        let mut out = vec![0.0; co * hw];
        for o in 0..co {
            let plane = &mut out[o * hw..(o + 1) * hw];
            plane.fill(bd[o]);
            for i in 0..ci {
                let kv = kd[o * ci + i];
                let xplane = &xd[i * hw..(i + 1) * hw];
                for (p, xv) in plane.iter_mut().zip(xplane) {
                    *p += kv * xv;
                }
            }
        }
        let tracked = self.tracked(x) || self.tracked(k) || self.tracked(b);
        Ok(self.push(Tensor::from_vec(vec![co, h, w], out), tracked, Op::Conv1x1 { x, k, b }))
    }

    /// 2x2 max pooling with stride 2. Requires even height and width; ties
    /// inside a window go to the first element in row-major order.
    pub fn max_pool2x2(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[1] % 2 != 0 || xs[2] % 2 != 0 {
            return Err(TapeError::BadShape {
                op: "max_pool2x2",
                expected: "rank-3 input [c, h, w] with even h and w".into(),
                got: xs,
            });
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let xd = self.data(x);
        let mut out = vec![0.0; c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dy in 0..2usize {
                        for dx in 0..2usize {
                            let idx = ch * h * w + (2 * oy + dy) * w + (2 * ox + dx);
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ch * oh * ow + oy * ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
        let tracked = self.tracked(x);
        Ok(self.push(
            Tensor::from_vec(vec![c, oh, ow], out),
            tracked,
            Op::MaxPool2x2 { x, argmax },
        ))
    }

    /// Spatial mean per channel: `[c,h,w] -> [c]`.
    pub fn global_avg_pool(&mut self, x: TensorId) -> Result<TensorId, TapeError> {
        self.check_id(x)?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(TapeError::BadShape {
                op: "global_avg_pool",
                expected: "rank-3 input [c, h, w]".into(),
                got: xs,
            });
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let xd = self.data(x);
        let out: Vec<f64> = (0..c)
            .map(|ch| xd[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::from_vec(vec![c], out), tracked, Op::GlobalAvgPool { x }))
    }
}

/// `plane[oy, ox] += kv * xplane[oy+ky-1, ox+kx-1]` over the in-bounds range.
fn shifted_axpy(plane: &mut [f64], xplane: &[f64], kv: f64, h: usize, w: usize, ky: usize, kx: usize) {
    let oy0 = 1usize.saturating_sub(ky);
    let oy1 = (h + 1 - ky).min(h);
    let ox0 = 1usize.saturating_sub(kx);
    let ox1 = (w + 1 - kx).min(w);
    if ox0 >= ox1 {
        return;
    }
    for oy in oy0..oy1 {
        let iy = oy + ky - 1;
        let dst = &mut plane[oy * w + ox0..oy * w + ox1];
        let src = &xplane[iy * w + ox0 + kx - 1..iy * w + ox1 + kx - 1];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += kv * s;
        }
    }
}

pub(super) fn backward_conv2d(
    tape: &Tape,
    x: TensorId,
    k: TensorId,
    b: TensorId,
    g: &[f64],
    flow: &mut [Option<Vec<f64>>],
) {
    let xs = tape.shape(x);
    let (ci, h, w) = (xs[0], xs[1], xs[2]);
    let co = tape.shape(k)[0];
    if tape.tracked(b) {
        let db: Vec<f64> = (0..co)
            .map(|o| g[o * h * w..(o + 1) * h * w].iter().sum())
            .collect();
        tape.bump(flow, b, &db);
    }
    if tape.tracked(k) {
        let xd = tape.data(x);
        let mut dk = vec![0.0; co * ci * 9];
        for o in 0..co {
            let gplane = &g[o * h * w..(o + 1) * h * w];
            for i in 0..ci {
                let xplane = &xd[i * h * w..(i + 1) * h * w];
                let kbase = (o * ci + i) * 9;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        dk[kbase + ky * 3 + kx] += shifted_dot(gplane, xplane, h, w, ky, kx);
                    }
                }
            }
        }
        tape.bump(flow, k, &dk);
    }
    if tape.tracked(x) {
        let kd = tape.data(k);
        let mut dx = vec![0.0; ci * h * w];
        for o in 0..co {
            let gplane = &g[o * h * w..(o + 1) * h * w];
            for i in 0..ci {
                let dxplane = &mut dx[i * h * w..(i + 1) * h * w];
                let kbase = (o * ci + i) * 9;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let kv = kd[kbase + ky * 3 + kx];
                        if kv == 0.0 {
                            continue;
                        }
                        shifted_scatter(dxplane, gplane, kv, h, w, ky, kx);
                    }
                }
            }
        }
        tape.bump(flow, x, &dx);
    }
}

/// `sum_oy_ox g[oy, ox] * xplane[oy+ky-1, ox+kx-1]` over the in-bounds range.
fn shifted_dot(g: &[f64], xplane: &[f64], h: usize, w: usize, ky: usize, kx: usize) -> f64 {
    let oy0 = 1usize.saturating_sub(ky);
    let oy1 = (h + 1 - ky).min(h);
    let ox0 = 1usize.saturating_sub(kx);
    let ox1 = (w + 1 - kx).min(w);
    if ox0 >= ox1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for oy in oy0..oy1 {
        let iy = oy + ky - 1;
        let grow = &g[oy * w + ox0..oy * w + ox1];
        let xrow = &xplane[iy * w + ox0 + kx - 1..iy * w + ox1 + kx - 1];
        for (gv, xv) in grow.iter().zip(xrow) {
            acc += gv * xv;
        }
    }
    acc
}

/// `dxplane[oy+ky-1, ox+kx-1] += kv * g[oy, ox]` over the in-bounds range.
fn shifted_scatter(dxplane: &mut [f64], g: &[f64], kv: f64, h: usize, w: usize, ky: usize, kx: usize) {
    let oy0 = 1usize.saturating_sub(ky);
    let oy1 = (h + 1 - ky).min(h);
    let ox0 = 1usize.saturating_sub(kx);
    let ox1 = (w + 1 - kx).min(w);
    if ox0 >= ox1 {
        return;
    }
    for oy in oy0..oy1 {
        let iy = oy + ky - 1;
        let dst = &mut dxplane[iy * w + ox0 + kx - 1..iy * w + ox1 + kx - 1];
        let src = &g[oy * w + ox0..oy * w + ox1];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += kv * s;
        }
    }
}

pub(super) fn backward_conv1x1(
    tape: &Tape,
    x: TensorId,
    k: TensorId,
    b: TensorId,
    g: &[f64],
    flow: &mut [Option<Vec<f64>>],
) {
    let xs = tape.shape(x);
    let (ci, hw) = (xs[0], xs[1] * xs[2]);
    let co = tape.shape(k)[0];
    if tape.tracked(b) {
        let db: Vec<f64> = (0..co).map(|o| g[o * hw..(o + 1) * hw].iter().sum()).collect();
        tape.bump(flow, b, &db);
    }
    if tape.tracked(k) {
        let xd = tape.data(x);
        let mut dk = vec![0.0; co * ci];
        for o in 0..co {
            let gplane = &g[o * hw..(o + 1) * hw];
            for i in 0..ci {
                let xplane = &xd[i * hw..(i + 1) * hw];
                let mut acc = 0.0;
                for (gv, xv) in gplane.iter().zip(xplane) {
                    acc += gv * xv;
                }
                dk[o * ci + i] = acc;
            }
        }
        tape.bump(flow, k, &dk);
    }
    if tape.tracked(x) {
        let kd = tape.data(k);
        let mut dx = vec![0.0; ci * hw];
        for o in 0..co {
            let gplane = &g[o * hw..(o + 1) * hw];
            for i in 0..ci {
                let kv = kd[o * ci + i];
                if kv == 0.0 {
                    continue;
                }
                let dplane = &mut dx[i * hw..(i + 1) * hw];
                for (d, gv) in dplane.iter_mut().zip(gplane) {
                    *d += kv * gv;
                }
            }
        }
        tape.bump(flow, x, &dx);
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tape, Tensor};

    /// Reference convolution: explicit zero padding, quadruple loop.
    fn conv2d_naive(x: &[f64], k: &[f64], b: &[f64], ci: usize, co: usize, h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = b[o];
                    for i in 0..ci {
                        for ky in 0..3usize {
                            for kx in 0..3usize {
                                let iy = oy as isize + ky as isize - 1;
                                let ix = ox as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += k[((o * ci + i) * 3 + ky) * 3 + kx]
                                    * x[i * h * w + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out[o * h * w + oy * w + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_matches_naive_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (ci, co, h, w) = (3, 4, 6, 5);
        let x: Vec<f64> = (0..ci * h * w).map(|_| rng.random::<f64>() - 0.5).collect();
        let k: Vec<f64> = (0..co * ci * 9).map(|_| rng.random::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..co).map(|_| rng.random::<f64>() - 0.5).collect();
        let want = conv2d_naive(&x, &k, &b, ci, co, h, w);

        let mut t = Tape::new();
        let xid = t.leaf(Tensor::from_vec(vec![ci, h, w], x), false);
        let kid = t.leaf(Tensor::from_vec(vec![co, ci, 3, 3], k), false);
        let bid = t.leaf(Tensor::from_vec(vec![co], b), false);
        let y = t.conv2d(xid, kid, bid).unwrap();
        assert_eq!(t.shape(y), &[co, h, w]);
        for (got, want) in t.value(y).data.iter().zip(&want) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn conv2d_rejects_wrong_kernel_shape() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![3, 4, 4]), false);
        let k = t.leaf(Tensor::zeros(vec![2, 3, 5, 5]), false);
        let b = t.leaf(Tensor::zeros(vec![2]), false);
        assert!(t.conv2d(x, k, b).is_err());
    }

    #[test]
    fn max_pool_picks_maxima_and_breaks_ties_row_major() {
        let mut t = Tape::new();
        // One channel, 2x4: left window has a tie (both 7.0), right window
        // max sits bottom-right.
        let x = t.leaf(
            Tensor::from_vec(vec![1, 2, 4], vec![7.0, 7.0, 1.0, 2.0, 3.0, 4.0, 5.0, 9.0]),
            true,
        );
        let y = t.max_pool2x2(x).unwrap();
        assert_eq!(t.value(y).data, vec![7.0, 9.0]);
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        // Tie routed to the first element in row-major order (index 0).
        assert_eq!(t.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn max_pool_rejects_odd_extent()
    {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::zeros(vec![1, 3, 4]), false);
        assert!(t.max_pool2x2(x).is_err());
    }

    #[test]
    fn global_avg_pool_averages_each_channel() {
        let mut t = Tape::new();
        let x = t.leaf(
            Tensor::from_vec(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0]),
            false,
        );
        let y = t.global_avg_pool(x).unwrap();
        assert_eq!(t.value(y).data, vec![2.5, 10.0]);
    }

    #[test]
    fn conv1x1_is_a_per_pixel_linear_map() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_vec(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]), false);
        let k = t.leaf(Tensor::from_vec(vec![1, 2], vec![10.0, 100.0]), false);
        let b = t.leaf(Tensor::from_vec(vec![1], vec![0.5]), false);
        let y = t.conv1x1(x, k, b).unwrap();
        assert_eq!(t.value(y).data, vec![10.0 + 300.0 + 0.5, 20.0 + 400.0 + 0.5]);
    }
}
