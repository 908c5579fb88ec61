//! CPU tensor ops with hand-written backward passes.
//!
//! All activations are `(B, C, H, W)` `f32` arrays in standard layout; the
//! kernels below work on the flat slices directly so the inner loops are
//! plain `mul-add` sweeps over contiguous rows, which the compiler
//! vectorizes well. Convolutions use "same" padding `dilation * (k - 1) / 2`
//! (odd kernels only).

use ndarray::{Array1, Array3, Array4};
use rand::Rng;

/// Probabilities are clamped this far away from 0 and 1 so that thresholds
/// at the extremes and log-losses stay well-defined in `f32`.
pub const PROB_CLAMP: f32 = 1e-7;

/// Weight init family: He for ReLU-heavy encoder stacks, Xavier for the
/// decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    He,
    Xavier,
}

fn init_weight(init: Init, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> f32 {
    let bound = match init {
        Init::He => (6.0 / fan_in as f32).sqrt(),
        Init::Xavier => (6.0 / (fan_in + fan_out) as f32).sqrt(),
    };
    rng.gen_range(-bound..bound)
}

/// Output extent of a same-padded strided convolution.
pub fn conv_out_dim(input: usize, k: usize, stride: usize, dilation: usize) -> usize {
    let pad = dilation * (k - 1) / 2;
    (input + 2 * pad - dilation * (k - 1) - 1) / stride + 1
}

/// Valid output range `[lo, hi)` such that `o * stride + off` stays inside
/// `[0, in_len)`.
fn valid_range(in_len: usize, out_len: usize, stride: usize, off: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = ((in_len as isize - 1 - off).div_euclid(s) + 1).min(out_len as isize);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

// ---------------------------------------------------------------------------
// Standard convolution
// ---------------------------------------------------------------------------

/// Dense 2D convolution with bias. Gradients accumulate into `gw`/`gb`
/// until [`Conv2d::zero_grads`].
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Array4<f32>, // (OC, IC, K, K)
    pub b: Array1<f32>,
    pub gw: Array4<f32>,
    pub gb: Array1<f32>,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv2d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(k % 2 == 1, "same padding requires odd kernels");
        let fan_in = in_ch * k * k;
        let fan_out = out_ch * k * k;
        let w = Array4::from_shape_fn((out_ch, in_ch, k, k), |_| {
            init_weight(init, fan_in, fan_out, rng)
        });
        Conv2d {
            gw: Array4::zeros(w.dim()),
            w,
            b: Array1::zeros(out_ch),
            gb: Array1::zeros(out_ch),
            stride,
            dilation,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.w.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.w.dim().2
    }

    /// Weights only, biases excluded (the classic separable-vs-dense count).
    pub fn weight_count(&self) -> usize {
        self.w.len()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn zero_grads(&mut self) {
        self.gw.fill(0.0);
        self.gb.fill(0.0);
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (bsz, ic, h, w) = x.dim();
        assert_eq!(ic, self.in_channels(), "conv input channels");
        let k = self.kernel();
        let (s, d) = (self.stride, self.dilation);
        let pad = (d * (k - 1) / 2) as isize;
        let oh = conv_out_dim(h, k, s, d);
        let ow = conv_out_dim(w, k, s, d);
        let oc = self.out_channels();

        let mut out = Array4::zeros((bsz, oc, oh, ow));
        let xs = x.as_slice().expect("contiguous input");
        let os = out.as_slice_mut().expect("contiguous output");
        let ws = self.w.as_slice().expect("contiguous weights");

        for b in 0..bsz {
            for o in 0..oc {
                let obase = ((b * oc + o) * oh) * ow;
                let bias = self.b[o];
                os[obase..obase + oh * ow].iter_mut().for_each(|v| *v = bias);
                for i in 0..ic {
                    let ibase = ((b * ic + i) * h) * w;
                    for ky in 0..k {
                        let off_y = (d * ky) as isize - pad;
                        let (oy_lo, oy_hi) = valid_range(h, oh, s, off_y);
                        for kx in 0..k {
                            let wv = ws[((o * ic + i) * k + ky) * k + kx];
                            if wv == 0.0 {
                                continue;
                            }
                            let off_x = (d * kx) as isize - pad;
                            let (ox_lo, ox_hi) = valid_range(w, ow, s, off_x);
                            if ox_hi <= ox_lo {
                                continue;
                            }
                            for oy in oy_lo..oy_hi {
                                let iy = (oy * s) as isize + off_y;
                                let irow = ibase + iy as usize * w;
                                let orow = obase + oy * ow;
                                if s == 1 {
                                    let i0 = (irow as isize + ox_lo as isize + off_x) as usize;
                                    let dst = &mut os[orow + ox_lo..orow + ox_hi];
                                    let src = &xs[i0..i0 + (ox_hi - ox_lo)];
                                    for (dv, sv) in dst.iter_mut().zip(src) {
                                        *dv += wv * sv;
                                    }
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        let ix = (ox * s) as isize + off_x;
                                        os[orow + ox] += wv * xs[irow + ix as usize];
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

    /// Backward pass: accumulates weight/bias gradients and returns the
    /// input gradient. `x` must be the forward input.
    pub fn backward(&mut self, x: &Array4<f32>, gy: &Array4<f32>) -> Array4<f32> {
        let (bsz, ic, h, w) = x.dim();
        let (gb_, oc, oh, ow) = gy.dim();
        assert_eq!(gb_, bsz);
        assert_eq!(oc, self.out_channels());
        let k = self.kernel();
        let (s, d) = (self.stride, self.dilation);
        let pad = (d * (k - 1) / 2) as isize;

        let mut gx = Array4::zeros((bsz, ic, h, w));
        let xs = x.as_slice().expect("contiguous input");
        let gys = gy.as_slice().expect("contiguous grad");
        let gxs = gx.as_slice_mut().expect("contiguous gx");
        let ws = self.w.as_slice().expect("contiguous weights");
        let gws = self.gw.as_slice_mut().expect("contiguous gw");

        for b in 0..bsz {
            for o in 0..oc {
                let obase = ((b * oc + o) * oh) * ow;
                let mut gb_acc = 0.0f32;
                for v in &gys[obase..obase + oh * ow] {
                    gb_acc += v;
                }
                self.gb[o] += gb_acc;

                for i in 0..ic {
                    let ibase = ((b * ic + i) * h) * w;
                    for ky in 0..k {
                        let off_y = (d * ky) as isize - pad;
                        let (oy_lo, oy_hi) = valid_range(h, oh, s, off_y);
                        for kx in 0..k {
                            let widx = ((o * ic + i) * k + ky) * k + kx;
                            let wv = ws[widx];
                            let off_x = (d * kx) as isize - pad;
                            let (ox_lo, ox_hi) = valid_range(w, ow, s, off_x);
                            if ox_hi <= ox_lo {
                                continue;
                            }
                            let mut gw_acc = 0.0f32;
                            for oy in oy_lo..oy_hi {
                                let iy = (oy * s) as isize + off_y;
                                let irow = ibase + iy as usize * w;
                                let orow = obase + oy * ow;
                                if s == 1 {
                                    let i0 = (irow as isize + ox_lo as isize + off_x) as usize;
                                    let gsrc = &gys[orow + ox_lo..orow + ox_hi];
                                    let xsrc = &xs[i0..i0 + (ox_hi - ox_lo)];
                                    let gdst = &mut gxs[i0..i0 + (ox_hi - ox_lo)];
                                    for ((gd, gv), xv) in
                                        gdst.iter_mut().zip(gsrc).zip(xsrc)
                                    {
                                        *gd += wv * gv;
                                        gw_acc += gv * xv;
                                    }
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        let ix = ((ox * s) as isize + off_x) as usize;
                                        let gv = gys[orow + ox];
                                        gxs[irow + ix] += wv * gv;
                                        gw_acc += gv * xs[irow + ix];
                                    }
                                }
                            }
                            gws[widx] += gw_acc;
                        }
                    }
                }
            }
        }
        gx
    }
}

// ---------------------------------------------------------------------------
// Depthwise convolution
// ---------------------------------------------------------------------------

/// Depthwise (per-channel) convolution, stride 1, no bias — the spatial
/// half of a separable conv; the pointwise half carries the bias.
#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    pub w: Array3<f32>, // (C, K, K)
    pub gw: Array3<f32>,
    pub dilation: usize,
}

impl DepthwiseConv2d {
    pub fn new(channels: usize, k: usize, dilation: usize, init: Init, rng: &mut impl Rng) -> Self {
        assert!(k % 2 == 1, "same padding requires odd kernels");
        let w = Array3::from_shape_fn((channels, k, k), |_| init_weight(init, k * k, k * k, rng));
        DepthwiseConv2d { gw: Array3::zeros(w.dim()), w, dilation }
    }

    pub fn channels(&self) -> usize {
        self.w.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.w.dim().1
    }

    pub fn weight_count(&self) -> usize {
        self.w.len()
    }

    pub fn zero_grads(&mut self) {
        self.gw.fill(0.0);
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        let (bsz, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "depthwise channels");
        let k = self.kernel();
        let d = self.dilation;
        let pad = (d * (k - 1) / 2) as isize;

        let mut out = Array4::zeros((bsz, c, h, w));
        let xs = x.as_slice().expect("contiguous input");
        let os = out.as_slice_mut().expect("contiguous output");
        let ws = self.w.as_slice().expect("contiguous weights");

        for b in 0..bsz {
            for ch in 0..c {
                let base = ((b * c + ch) * h) * w;
                for ky in 0..k {
                    let off_y = (d * ky) as isize - pad;
                    let (oy_lo, oy_hi) = valid_range(h, h, 1, off_y);
                    for kx in 0..k {
                        let wv = ws[(ch * k + ky) * k + kx];
                        let off_x = (d * kx) as isize - pad;
                        let (ox_lo, ox_hi) = valid_range(w, w, 1, off_x);
                        if ox_hi <= ox_lo {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy as isize + off_y;
                            let irow = base + iy as usize * w;
                            let orow = base + oy * w;
                            let i0 = (irow as isize + ox_lo as isize + off_x) as usize;
                            let dst = &mut os[orow + ox_lo..orow + ox_hi];
                            let src = &xs[i0..i0 + (ox_hi - ox_lo)];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv += wv * sv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, x: &Array4<f32>, gy: &Array4<f32>) -> Array4<f32> {
        let (bsz, c, h, w) = x.dim();
        let k = self.kernel();
        let d = self.dilation;
        let pad = (d * (k - 1) / 2) as isize;

        let mut gx = Array4::zeros((bsz, c, h, w));
        let xs = x.as_slice().expect("contiguous input");
        let gys = gy.as_slice().expect("contiguous grad");
        let gxs = gx.as_slice_mut().expect("contiguous gx");
        let ws = self.w.as_slice().expect("contiguous weights");
        let gws = self.gw.as_slice_mut().expect("contiguous gw");

        for b in 0..bsz {
            for ch in 0..c {
                let base = ((b * c + ch) * h) * w;
                for ky in 0..k {
                    let off_y = (d * ky) as isize - pad;
                    let (oy_lo, oy_hi) = valid_range(h, h, 1, off_y);
                    for kx in 0..k {
                        let widx = (ch * k + ky) * k + kx;
                        let wv = ws[widx];
                        let off_x = (d * kx) as isize - pad;
                        let (ox_lo, ox_hi) = valid_range(w, w, 1, off_x);
                        if ox_hi <= ox_lo {
                            continue;
                        }
                        let mut gw_acc = 0.0f32;
                        for oy in oy_lo..oy_hi {
                            let iy = oy as isize + off_y;
                            let irow = base + iy as usize * w;
                            let orow = base + oy * w;
                            let i0 = (irow as isize + ox_lo as isize + off_x) as usize;
                            let span = ox_hi - ox_lo;
                            let gsrc = &gys[orow + ox_lo..orow + ox_lo + span];
                            let xsrc = &xs[i0..i0 + span];
                            let gdst = &mut gxs[i0..i0 + span];
                            for ((gd, gv), xv) in gdst.iter_mut().zip(gsrc).zip(xsrc) {
                                *gd += wv * gv;
                                gw_acc += gv * xv;
                            }
                        }
                        gws[widx] += gw_acc;
                    }
                }
            }
        }
        gx
    }
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch norm with running statistics for eval mode.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
    pub ggamma: Array1<f32>,
    pub gbeta: Array1<f32>,
    pub momentum: f32,
    pub eps: f32,
}

/// Values the backward pass needs from the forward pass.
#[derive(Debug)]
pub struct BnCache {
    pub xhat: Array4<f32>,
    pub inv_std: Array1<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            ggamma: Array1::zeros(channels),
            gbeta: Array1::zeros(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    pub fn zero_grads(&mut self) {
        self.ggamma.fill(0.0);
        self.gbeta.fill(0.0);
    }

    /// Training forward: normalize by batch statistics and fold them into
    /// the running estimates.
    pub fn forward_train(&mut self, x: &Array4<f32>) -> (Array4<f32>, BnCache) {
        let (bsz, c, h, w) = x.dim();
        assert_eq!(c, self.channels(), "batchnorm channels");
        let m = (bsz * h * w) as f32;
        let plane = h * w;
        let xs = x.as_slice().expect("contiguous");

        let mut xhat = Array4::zeros((bsz, c, h, w));
        let mut out = Array4::zeros((bsz, c, h, w));
        let mut inv_std = Array1::zeros(c);
        {
            let xh = xhat.as_slice_mut().expect("contiguous");
            let os = out.as_slice_mut().expect("contiguous");
            for ch in 0..c {
                let mut sum = 0.0f32;
                let mut sq = 0.0f32;
                for b in 0..bsz {
                    let base = ((b * c + ch) * plane) as usize;
                    for &v in &xs[base..base + plane] {
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / m;
                let var = (sq / m - mean * mean).max(0.0);
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[ch] = istd;

                self.running_mean[ch] =
                    (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
                self.running_var[ch] =
                    (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var;

                let (g, bta) = (self.gamma[ch], self.beta[ch]);
                for b in 0..bsz {
                    let base = ((b * c + ch) * plane) as usize;
                    for idx in base..base + plane {
                        let v = (xs[idx] - mean) * istd;
                        xh[idx] = v;
                        os[idx] = g * v + bta;
                    }
                }
            }
        }
        (out, BnCache { xhat, inv_std })
    }

    /// Eval forward: normalize by running statistics, no state change.
    pub fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        let (bsz, c, h, w) = x.dim();
        let plane = h * w;
        let xs = x.as_slice().expect("contiguous");
        let mut out = Array4::zeros((bsz, c, h, w));
        let os = out.as_slice_mut().expect("contiguous");
        for ch in 0..c {
            let istd = 1.0 / (self.running_var[ch] + self.eps).sqrt();
            let mean = self.running_mean[ch];
            let (g, bta) = (self.gamma[ch], self.beta[ch]);
            for b in 0..bsz {
                let base = ((b * c + ch) * plane) as usize;
                for idx in base..base + plane {
                    os[idx] = g * (xs[idx] - mean) * istd + bta;
                }
            }
        }
        out
    }

    pub fn backward(&mut self, cache: &BnCache, gy: &Array4<f32>) -> Array4<f32> {
        let (bsz, c, h, w) = gy.dim();
        let m = (bsz * h * w) as f32;
        let plane = h * w;
        let gys = gy.as_slice().expect("contiguous");
        let xh = cache.xhat.as_slice().expect("contiguous");

        let mut gx = Array4::zeros((bsz, c, h, w));
        let gxs = gx.as_slice_mut().expect("contiguous");
        for ch in 0..c {
            let mut sum_gy = 0.0f32;
            let mut sum_gy_xhat = 0.0f32;
            for b in 0..bsz {
                let base = ((b * c + ch) * plane) as usize;
                for idx in base..base + plane {
                    sum_gy += gys[idx];
                    sum_gy_xhat += gys[idx] * xh[idx];
                }
            }
            self.gbeta[ch] += sum_gy;
            self.ggamma[ch] += sum_gy_xhat;

            let scale = self.gamma[ch] * cache.inv_std[ch] / m;
            for b in 0..bsz {
                let base = ((b * c + ch) * plane) as usize;
                for idx in base..base + plane {
                    gxs[idx] = scale * (m * gys[idx] - sum_gy - xh[idx] * sum_gy_xhat);
                }
            }
        }
        gx
    }
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities and resampling
// ---------------------------------------------------------------------------

pub fn relu(x: &Array4<f32>) -> Array4<f32> {
    x.mapv(|v| v.max(0.0))
}

/// ReLU gradient from the forward *output* (positive where active).
pub fn relu_backward(y: &Array4<f32>, gy: &Array4<f32>) -> Array4<f32> {
    let mut gx = gy.clone();
    for (g, &v) in gx.iter_mut().zip(y.iter()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

/// Exact logistic probabilities. Saturated logits map to exact 0/1, so the
/// paired gradient `p (1 - p)` vanishes with them; training must use this
/// (a clamp floor would leave a tiny one-sided gradient everywhere, which a
/// scale-free optimizer amplifies into unbounded parameter drift).
pub fn sigmoid(logits: &Array4<f32>) -> Array4<f32> {
    logits.mapv(|z| 1.0 / (1.0 + (-z).exp()))
}

/// Logistic probabilities, clamped away from exact 0/1 for consumers that
/// divide by `p` or `1 - p`.
pub fn sigmoid_clamped(logits: &Array4<f32>) -> Array4<f32> {
    logits.mapv(|z| (1.0 / (1.0 + (-z).exp())).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
}

/// Two taps (index, weight) feeding one output position of a x2 bilinear
/// upsample with half-pixel centers and clamped borders.
fn up_taps(o: usize, n_in: usize) -> ((usize, f32), (usize, f32)) {
    let i = o / 2;
    if o % 2 == 0 {
        ((i.saturating_sub(1), 0.25), (i, 0.75))
    } else {
        ((i, 0.75), ((i + 1).min(n_in - 1), 0.25))
    }
}

/// Bilinear x2 upsampling (align_corners = false).
pub fn upsample2(x: &Array4<f32>) -> Array4<f32> {
    let (bsz, c, h, w) = x.dim();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Array4::zeros((bsz, c, oh, ow));
    let xs = x.as_slice().expect("contiguous");
    let os = out.as_slice_mut().expect("contiguous");
    for b in 0..bsz {
        for ch in 0..c {
            let ibase = ((b * c + ch) * h) * w;
            let obase = ((b * c + ch) * oh) * ow;
            for oy in 0..oh {
                let ((y0, wy0), (y1, wy1)) = up_taps(oy, h);
                let r0 = ibase + y0 * w;
                let r1 = ibase + y1 * w;
                let orow = obase + oy * ow;
                for ox in 0..ow {
                    let ((x0, wx0), (x1, wx1)) = up_taps(ox, w);
                    os[orow + ox] = wy0 * (wx0 * xs[r0 + x0] + wx1 * xs[r0 + x1])
                        + wy1 * (wx0 * xs[r1 + x0] + wx1 * xs[r1 + x1]);
                }
            }
        }
    }
    out
}

/// Exact adjoint of [`upsample2`].
pub fn upsample2_backward(gy: &Array4<f32>) -> Array4<f32> {
    let (bsz, c, oh, ow) = gy.dim();
    let (h, w) = (oh / 2, ow / 2);
    let mut gx = Array4::zeros((bsz, c, h, w));
    let gys = gy.as_slice().expect("contiguous");
    let gxs = gx.as_slice_mut().expect("contiguous");
    for b in 0..bsz {
        for ch in 0..c {
            let ibase = ((b * c + ch) * h) * w;
            let obase = ((b * c + ch) * oh) * ow;
            for oy in 0..oh {
                let ((y0, wy0), (y1, wy1)) = up_taps(oy, h);
                let orow = obase + oy * ow;
                for ox in 0..ow {
                    let ((x0, wx0), (x1, wx1)) = up_taps(ox, w);
                    let g = gys[orow + ox];
                    gxs[ibase + y0 * w + x0] += wy0 * wx0 * g;
                    gxs[ibase + y0 * w + x1] += wy0 * wx1 * g;
                    gxs[ibase + y1 * w + x0] += wy1 * wx0 * g;
                    gxs[ibase + y1 * w + x1] += wy1 * wx1 * g;
                }
            }
        }
    }
    gx
}
