//! Primitive layers on planar tensors with hand-written adjoints.

/// `channels × height × width`, plane-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// 3×3 convolution, zero padding 1, stride 1. `weight` is
/// `[out][in][ky][kx]`.
pub fn conv3x3(input: &Tensor, weight: &[f64], bias: &[f64], out_c: usize) -> Tensor {
    let (h, w, in_c) = (input.height, input.width, input.channels);
    debug_assert_eq!(weight.len(), out_c * in_c * 9);
    let mut out = Tensor::zeros(out_c, h, w);
    for o in 0..out_c {
        let plane = out.plane_mut(o);
        plane.fill(bias[o]);
        for i in 0..in_c {
            let src = input.plane(i);
            let k = &weight[(o * in_c + i) * 9..(o * in_c + i + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    // output (y, x) reads input (y + ky - 1, x + kx - 1)
                    let y_lo = 1usize.saturating_sub(ky);
                    let y_hi = (h + 1 - ky).min(h);
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let dst = &mut plane[y * w + x_lo..y * w + x_hi];
                        let s = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                        for (d, &v) in dst.iter_mut().zip(s) {
                            *d += wv * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`conv3x3`]: accumulates weight and bias gradients and returns
/// the input gradient (skipped when `need_input` is false).
pub fn conv3x3_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let (h, w, in_c) = (input.height, input.width, input.channels);
    let out_c = grad_out.channels;
    let mut grad_in = need_input.then(|| Tensor::zeros(in_c, h, w));
    for (o, gb) in grad_bias.iter_mut().enumerate().take(out_c) {
        let g = grad_out.plane(o);
        *gb += g.iter().sum::<f64>();
        for i in 0..in_c {
            let src = input.plane(i);
            let base = (o * in_c + i) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let y_lo = 1usize.saturating_sub(ky);
                    let y_hi = (h + 1 - ky).min(h);
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let sy = y + ky - 1;
                        let gr = &g[y * w + x_lo..y * w + x_hi];
                        let s = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad_weight[base + ky * 3 + kx] += acc;
                    if let Some(gi) = grad_in.as_mut() {
                        let wv = weight[base + ky * 3 + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dst_plane = gi.plane_mut(i);
                        for y in y_lo..y_hi {
                            let sy = y + ky - 1;
                            let gr = &g[y * w + x_lo..y * w + x_hi];
                            let d = &mut dst_plane[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                            for (dv, &gv) in d.iter_mut().zip(gr) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

pub fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `grad` by the positive part of the post-activation `act`.
pub fn relu_backward_in_place(act: &Tensor, grad: &mut Tensor) {
    for (g, &a) in grad.data.iter_mut().zip(&act.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index of the winner (first maximum in scan order).
pub fn maxpool2(input: &Tensor) -> (Tensor, Vec<usize>) {
    let (h, w) = (input.height / 2, input.width / 2);
    let mut out = Tensor::zeros(input.channels, h, w);
    let mut arg = vec![0usize; input.channels * h * w];
    let iw = input.width;
    let n_in = input.height * input.width;
    for c in 0..input.channels {
        let src = input.plane(c);
        for y in 0..h {
            for x in 0..w {
                let mut best = (2 * y) * iw + 2 * x;
                for &(dy, dx) in &[(0, 1), (1, 0), (1, 1)] {
                    let k = (2 * y + dy) * iw + 2 * x + dx;
                    if src[k] > src[best] {
                        best = k;
                    }
                }
                let o = (c * h + y) * w + x;
                out.data[o] = src[best];
                arg[o] = c * n_in + best;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(input_shape: (usize, usize, usize), arg: &[usize], grad_out: &Tensor) -> Tensor {
    let (c, h, w) = input_shape;
    let mut g = Tensor::zeros(c, h, w);
    for (o, &k) in arg.iter().enumerate() {
        g.data[k] += grad_out.data[o];
    }
    g
}

/// Per-axis taps for bilinear upsampling by an integer factor with
/// half-pixel alignment: `src = (dst + 0.5) / factor - 0.5`, clamped.
#[derive(Clone, Debug)]
pub struct UpsampleTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    t: Vec<f64>,
}

impl UpsampleTaps {
    pub fn new(src_len: usize, factor: usize) -> Self {
        let n = src_len * factor;
        let mut lo = Vec::with_capacity(n);
        let mut hi = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        let max = (src_len - 1) as f64;
        for d in 0..n {
            let s = ((d as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, max);
            let l = s.floor() as usize;
            lo.push(l);
            hi.push((l + 1).min(src_len - 1));
            t.push(s - l as f64);
        }
        Self { lo, hi, t }
    }
}

pub fn upsample_bilinear(input: &Tensor, factor: usize) -> Tensor {
    let tx = UpsampleTaps::new(input.width, factor);
    let ty = UpsampleTaps::new(input.height, factor);
    let (oh, ow) = (input.height * factor, input.width * factor);
    let mut out = Tensor::zeros(input.channels, oh, ow);
    let iw = input.width;
    for c in 0..input.channels {
        let src = input.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh {
            let (y0, y1, wy) = (ty.lo[y], ty.hi[y], ty.t[y]);
            for x in 0..ow {
                let (x0, x1, wx) = (tx.lo[x], tx.hi[x], tx.t[x]);
                let top = src[y0 * iw + x0] * (1.0 - wx) + src[y0 * iw + x1] * wx;
                let bot = src[y1 * iw + x0] * (1.0 - wx) + src[y1 * iw + x1] * wx;
                dst[y * ow + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

pub fn upsample_bilinear_backward(grad_out: &Tensor, factor: usize) -> Tensor {
    let (ih, iw) = (grad_out.height / factor, grad_out.width / factor);
    let tx = UpsampleTaps::new(iw, factor);
    let ty = UpsampleTaps::new(ih, factor);
    let ow = grad_out.width;
    let mut g = Tensor::zeros(grad_out.channels, ih, iw);
    for c in 0..grad_out.channels {
        let src = grad_out.plane(c);
        let dst = g.plane_mut(c);
        for y in 0..grad_out.height {
            let (y0, y1, wy) = (ty.lo[y], ty.hi[y], ty.t[y]);
            for x in 0..ow {
                let (x0, x1, wx) = (tx.lo[x], tx.hi[x], tx.t[x]);
                let v = src[y * ow + x];
                dst[y0 * iw + x0] += v * (1.0 - wx) * (1.0 - wy);
                dst[y0 * iw + x1] += v * wx * (1.0 - wy);
                dst[y1 * iw + x0] += v * (1.0 - wx) * wy;
                dst[y1 * iw + x1] += v * wx * wy;
            }
        }
    }
    g
}

/// Added to the squared norm before the square root.
pub const NORM_EPS: f64 = 1e-12;

/// Per-pixel L2 normalization across channels. Returns the normalized tensor
/// and the per-pixel norms `sqrt(|u|² + NORM_EPS)`.
pub fn l2_normalize(input: &Tensor) -> (Tensor, Vec<f64>) {
    let n = input.height * input.width;
    let mut norms = vec![NORM_EPS; n];
    for c in 0..input.channels {
        for (s, &v) in norms.iter_mut().zip(input.plane(c)) {
            *s += v * v;
        }
    }
    for s in &mut norms {
        *s = s.sqrt();
    }
    let mut out = input.clone();
    for c in 0..out.channels {
        for (v, &s) in out.plane_mut(c).iter_mut().zip(&norms) {
            *v /= s;
        }
    }
    (out, norms)
}

/// Adjoint of [`l2_normalize`] given its output `v = u / s`:
/// `du = (dv - v (v · dv)) / s`.
pub fn l2_normalize_backward(output: &Tensor, norms: &[f64], grad_out: &Tensor) -> Tensor {
    let n = output.height * output.width;
    let mut dot = vec![0.0; n];
    for c in 0..output.channels {
        for ((d, &v), &g) in dot.iter_mut().zip(output.plane(c)).zip(grad_out.plane(c)) {
            *d += v * g;
        }
    }
    let mut g = grad_out.clone();
    for c in 0..g.channels {
        let v = output.plane(c);
        for (k, gv) in g.plane_mut(c).iter_mut().enumerate() {
            *gv = (*gv - v[k] * dot[k]) / norms[k];
        }
    }
    g
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
