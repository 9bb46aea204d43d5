//! Raw forward/backward loops over row-major slices.
//!
//! These carry no shape checking beyond debug assertions; [`super::Graph`]
//! validates operands before calling in.

/// Geometry of a 2-D convolution over NCHW data.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k_w) / self.stride + 1
    }

    /// Output indices `o` with `o*stride + k - pad` inside `0..len`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len - 1
        let hi_num = len as isize - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(out_len as isize);
        if lo >= hi {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

pub fn conv2d_forward(g: &ConvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.batch * g.out_c * oh * ow];
    let in_plane = g.in_h * g.in_w;
    let out_plane = oh * ow;
    for b in 0..g.batch {
        for oc in 0..g.out_c {
            let out_map = &mut out[(b * g.out_c + oc) * out_plane..][..out_plane];
            for ic in 0..g.in_c {
                let in_map = &input[(b * g.in_c + ic) * in_plane..][..in_plane];
                for ky in 0..g.k_h {
                    let (y0, y1) = g.valid_range(ky, g.in_h, oh);
                    for kx in 0..g.k_w {
                        let w = kernel[((oc * g.in_c + ic) * g.k_h + ky) * g.k_w + kx];
                        if w == 0.0 {
                            continue;
                        }
                        let (x0, x1) = g.valid_range(kx, g.in_w, ow);
                        for oy in y0..y1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let in_row = &in_map[iy * g.in_w..][..g.in_w];
                            let out_row = &mut out_map[oy * ow..][..ow];
                            if g.stride == 1 {
                                let ix0 = x0 + kx - g.pad;
                                let src = &in_row[ix0..ix0 + (x1 - x0)];
                                for (o, &v) in out_row[x0..x1].iter_mut().zip(src) {
                                    *o += w * v;
                                }
                            } else {
                                for ox in x0..x1 {
                                    out_row[ox] += w * in_row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates `dL/dinput` and `dL/dkernel` from `dL/doutput`.
pub fn conv2d_backward(
    g: &ConvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    grad_in: Option<&mut [f64]>,
    grad_kernel: Option<&mut [f64]>,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let in_plane = g.in_h * g.in_w;
    let out_plane = oh * ow;
    if let Some(gin) = grad_in {
        for b in 0..g.batch {
            for oc in 0..g.out_c {
                let go_map = &grad_out[(b * g.out_c + oc) * out_plane..][..out_plane];
                for ic in 0..g.in_c {
                    let gi_map = &mut gin[(b * g.in_c + ic) * in_plane..][..in_plane];
                    for ky in 0..g.k_h {
                        let (y0, y1) = g.valid_range(ky, g.in_h, oh);
                        for kx in 0..g.k_w {
                            let w = kernel[((oc * g.in_c + ic) * g.k_h + ky) * g.k_w + kx];
                            if w == 0.0 {
                                continue;
                            }
                            let (x0, x1) = g.valid_range(kx, g.in_w, ow);
                            for oy in y0..y1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let go_row = &go_map[oy * ow..][..ow];
                                let gi_row = &mut gi_map[iy * g.in_w..][..g.in_w];
                                if g.stride == 1 {
                                    let ix0 = x0 + kx - g.pad;
                                    let dst = &mut gi_row[ix0..ix0 + (x1 - x0)];
                                    for (d, &v) in dst.iter_mut().zip(&go_row[x0..x1]) {
                                        *d += w * v;
                                    }
                                } else {
                                    for ox in x0..x1 {
                                        gi_row[ox * g.stride + kx - g.pad] += w * go_row[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(gk) = grad_kernel {
        for b in 0..g.batch {
            for oc in 0..g.out_c {
                let go_map = &grad_out[(b * g.out_c + oc) * out_plane..][..out_plane];
                for ic in 0..g.in_c {
                    let in_map = &input[(b * g.in_c + ic) * in_plane..][..in_plane];
                    for ky in 0..g.k_h {
                        let (y0, y1) = g.valid_range(ky, g.in_h, oh);
                        for kx in 0..g.k_w {
                            let (x0, x1) = g.valid_range(kx, g.in_w, ow);
                            let mut acc = 0.0;
                            for oy in y0..y1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let go_row = &go_map[oy * ow..][..ow];
                                let in_row = &in_map[iy * g.in_w..][..g.in_w];
                                if g.stride == 1 {
                                    let ix0 = x0 + kx - g.pad;
                                    acc += go_row[x0..x1]
                                        .iter()
                                        .zip(&in_row[ix0..ix0 + (x1 - x0)])
                                        .map(|(a, b)| a * b)
                                        .sum::<f64>();
                                } else {
                                    for ox in x0..x1 {
                                        acc += go_row[ox] * in_row[ox * g.stride + kx - g.pad];
                                    }
                                }
                            }
                            gk[((oc * g.in_c + ic) * g.k_h + ky) * g.k_w + kx] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Per-pixel linear map across channels: `out[o] = sum_c w[o][c] * in[c] + b[o]`.
pub fn conv1x1_forward(
    batch: usize,
    in_c: usize,
    out_c: usize,
    plane: usize,
    input: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut out = vec![0.0; batch * out_c * plane];
    for b in 0..batch {
        for oc in 0..out_c {
            let dst = &mut out[(b * out_c + oc) * plane..][..plane];
            if let Some(bias) = bias {
                dst.fill(bias[oc]);
            }
            for ic in 0..in_c {
                let w = weight[oc * in_c + ic];
                let src = &input[(b * in_c + ic) * plane..][..plane];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d += w * v;
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv1x1_backward(
    batch: usize,
    in_c: usize,
    out_c: usize,
    plane: usize,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    mut grad_in: Option<&mut [f64]>,
    mut grad_w: Option<&mut [f64]>,
    mut grad_b: Option<&mut [f64]>,
) {
    for b in 0..batch {
        for oc in 0..out_c {
            let go = &grad_out[(b * out_c + oc) * plane..][..plane];
            if let Some(gb) = grad_b.as_deref_mut() {
                gb[oc] += go.iter().sum::<f64>();
            }
            for ic in 0..in_c {
                let src = &input[(b * in_c + ic) * plane..][..plane];
                if let Some(gw) = grad_w.as_deref_mut() {
                    gw[oc * in_c + ic] += go.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                }
                if let Some(gi) = grad_in.as_deref_mut() {
                    let w = weight[oc * in_c + ic];
                    let dst = &mut gi[(b * in_c + ic) * plane..][..plane];
                    for (d, &g) in dst.iter_mut().zip(go) {
                        *d += w * g;
                    }
                }
            }
        }
    }
}

/// Geometry of a channel-wise transposed convolution sharing one `k x k` kernel.
#[derive(Clone, Copy, Debug)]
pub struct DeconvGeom {
    pub planes: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h - 1) * self.stride + self.k - 2 * self.pad
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - 1) * self.stride + self.k - 2 * self.pad
    }

    fn out_index(&self, i: usize, k: usize, out_len: usize) -> Option<usize> {
        let o = (i * self.stride + k) as isize - self.pad as isize;
        (o >= 0 && (o as usize) < out_len).then_some(o as usize)
    }
}

pub fn deconv_forward(g: &DeconvGeom, input: &[f64], kernel: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; g.planes * oh * ow];
    for p in 0..g.planes {
        let src = &input[p * g.in_h * g.in_w..][..g.in_h * g.in_w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for iy in 0..g.in_h {
            for ix in 0..g.in_w {
                let v = src[iy * g.in_w + ix];
                if v == 0.0 {
                    continue;
                }
                for ky in 0..g.k {
                    let Some(oy) = g.out_index(iy, ky, oh) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ox) = g.out_index(ix, kx, ow) else {
                            continue;
                        };
                        dst[oy * ow + ox] += v * kernel[ky * g.k + kx];
                    }
                }
            }
        }
    }
    out
}

pub fn deconv_backward(
    g: &DeconvGeom,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    mut grad_in: Option<&mut [f64]>,
    mut grad_kernel: Option<&mut [f64]>,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    for p in 0..g.planes {
        let src = &input[p * g.in_h * g.in_w..][..g.in_h * g.in_w];
        let go = &grad_out[p * oh * ow..][..oh * ow];
        for iy in 0..g.in_h {
            for ix in 0..g.in_w {
                let v = src[iy * g.in_w + ix];
                let mut acc = 0.0;
                for ky in 0..g.k {
                    let Some(oy) = g.out_index(iy, ky, oh) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ox) = g.out_index(ix, kx, ow) else {
                            continue;
                        };
                        let gval = go[oy * ow + ox];
                        acc += gval * kernel[ky * g.k + kx];
                        if let Some(gk) = grad_kernel.as_deref_mut() {
                            gk[ky * g.k + kx] += v * gval;
                        }
                    }
                }
                if let Some(gi) = grad_in.as_deref_mut() {
                    gi[p * g.in_h * g.in_w + iy * g.in_w + ix] += acc;
                }
            }
        }
    }
}

/// 1-D taps of the Gaussian upsampling kernel for an integer factor `f`.
///
/// Length `2f`, sigma `f/2`, centered at `f - 0.5`. Taps `t` and `t + f`
/// land on the same output pixel, so each such pair is normalized to sum to 1.
pub fn gaussian_taps(factor: usize) -> Vec<f64> {
    let f = factor;
    let sigma = f as f64 / 2.0;
    let center = f as f64 - 0.5;
    let g = |t: usize| (-(t as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp();
    let mut taps = vec![0.0; 2 * f];
    for t in 0..f {
        let (a, b) = (g(t), g(t + f));
        taps[t] = a / (a + b);
        taps[t + f] = b / (a + b);
    }
    taps
}

/// Separable 2-D Gaussian upsampling kernel, row-major `2f x 2f`.
pub fn gaussian_kernel(factor: usize) -> Vec<f64> {
    let taps = gaussian_taps(factor);
    let mut k = Vec::with_capacity(taps.len() * taps.len());
    for &a in &taps {
        for &b in &taps {
            k.push(a * b);
        }
    }
    k
}

/// 2x2 max pooling; returns pooled values and the flat input index of each max.
pub fn max_pool2_forward(
    planes: usize,
    h: usize,
    w: usize,
    input: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + 2 * oy * w + 2 * ox;
                let mut best = input[best_i];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    // strict: ties keep the earlier index in scan order
                    if input[i] > best {
                        best = input[i];
                        best_i = i;
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Weighted binary cross-entropy on logits, summed over pixels.
pub fn weighted_bce_forward(logits: &[f64], labels: &[bool], pos_w: f64, neg_w: f64) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(&x, &y)| {
            if y {
                pos_w * softplus(-x)
            } else {
                neg_w * softplus(x)
            }
        })
        .sum()
}

pub fn weighted_bce_grad(
    logits: &[f64],
    labels: &[bool],
    pos_w: f64,
    neg_w: f64,
    upstream: f64,
    out: &mut [f64],
) {
    for ((g, &x), &y) in out.iter_mut().zip(logits).zip(labels) {
        let s = sigmoid(x);
        *g += upstream * if y { pos_w * (s - 1.0) } else { neg_w * s };
    }
}
