//! Layer kernels. Forward functions are pure; backward functions take the
//! forward input explicitly, accumulate into [`Grads`] and return the input
//! gradient only when asked.

use std::collections::HashMap;

use super::params::{Grads, ParamId, ParamStore, Role};
use super::scalar::sigmoid;
use super::{Scalar, Tensor};

pub const NORM_EPS: f64 = 1e-3;

/// Output size and leading padding of a "same" convolution:
/// `out = ceil(in / stride)`, `pad_total = max((out-1)*stride + k - in, 0)`,
/// `pad_before = pad_total / 2`.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

/// Output indices `o` in `[lo, hi)` for which `o*stride + tap - pad` is a
/// valid input index.
#[inline]
fn valid_range(tap: usize, pad: usize, stride: usize, input: usize, out: usize) -> (usize, usize) {
    let off = tap as isize - pad as isize;
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(stride) };
    let last = input as isize - 1 - off;
    let hi = if last < 0 { 0 } else { (last as usize / stride + 1).min(out) };
    (lo.min(hi), hi)
}

fn he_normal<T: Scalar>(n: usize, fan_in: usize, rng: &mut crate::rng::Rng) -> Vec<T> {
    use rand_distr::{Distribution, Normal};
    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    (0..n).map(|_| T::of(d.sample(rng))).collect()
}

/// Creates parameters with a name-keyed stream so initial values do not
/// depend on construction order.
pub struct Init<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub seed: u64,
}

impl<T: Scalar> Init<'_, T> {
    fn rng(&self, name: &str) -> crate::rng::Rng {
        crate::rng::stream(self.seed, &[crate::rng::tag(name)])
    }

    pub fn he(&mut self, name: String, group: &str, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let n = shape.iter().product();
        let data = he_normal(n, fan_in, &mut self.rng(&name));
        self.store.add(name, group, Role::Weight, shape, data)
    }

    pub fn filled(&mut self, name: String, group: &str, role: Role, n: usize, v: f64) -> ParamId {
        self.store.add(name, group, role, vec![n], vec![T::of(v); n])
    }
}

// ---------------------------------------------------------------- conv

/// Dense convolution without bias, weight `cout x (cin*k*k)`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new<T: Scalar>(init: &mut Init<T>, prefix: &str, group: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let w = init.he(format!("{prefix}.weight"), group, vec![cout, cin, k, k], cin * k * k);
        Self { w, cin, cout, k, stride }
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn im2col<T: Scalar>(&self, x: &Tensor<T>) -> (Vec<T>, usize, usize) {
        let (oh, ph) = same_padding(x.h, self.k, self.stride);
        let (ow, pw) = same_padding(x.w, self.k, self.stride);
        let ohw = oh * ow;
        let mut cols = vec![T::zero(); self.cin * self.k * self.k * ohw];
        for ci in 0..self.cin {
            let xc = x.channel(ci);
            for ky in 0..self.k {
                let (ylo, yhi) = valid_range(ky, ph, self.stride, x.h, oh);
                for kx in 0..self.k {
                    let (xlo, xhi) = valid_range(kx, pw, self.stride, x.w, ow);
                    let row = &mut cols[((ci * self.k + ky) * self.k + kx) * ohw..][..ohw];
                    for oy in ylo..yhi {
                        let iy = oy * self.stride + ky - ph;
                        for ox in xlo..xhi {
                            row[oy * ow + ox] = xc[iy * x.w + ox * self.stride + kx - pw];
                        }
                    }
                }
            }
        }
        (cols, oh, ow)
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.c, self.cin);
        let kk = self.cin * self.k * self.k;
        let w = p.get(self.w);
        if self.pointwise() {
            let mut y = Tensor::zeros(self.cout, x.h, x.w);
            let n = x.hw();
            T::gemm(self.cout, kk, n, T::one(), w, kk as isize, 1, &x.data, n as isize, 1, T::zero(), &mut y.data, n as isize, 1);
            return y;
        }
        let (cols, oh, ow) = self.im2col(x);
        let n = oh * ow;
        let mut y = Tensor::zeros(self.cout, oh, ow);
        T::gemm(self.cout, kk, n, T::one(), w, kk as isize, 1, &cols, n as isize, 1, T::zero(), &mut y.data, n as isize, 1);
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let kk = self.cin * self.k * self.k;
        let n = dy.hw();
        let cols_owned;
        let cols: &[T] = if self.pointwise() {
            &x.data
        } else {
            cols_owned = self.im2col(x).0;
            &cols_owned
        };
        if grads.wants(self.w) {
            let gw = &mut grads.g[self.w];
            // dW += dY * cols^T
            T::gemm(self.cout, n, kk, T::one(), &dy.data, n as isize, 1, cols, 1, n as isize, T::one(), gw, kk as isize, 1);
        }
        if !need_dx {
            return None;
        }
        let w = p.get(self.w);
        let mut dcols = vec![T::zero(); kk * n];
        // dcols = W^T * dY
        T::gemm(kk, self.cout, n, T::one(), w, 1, kk as isize, &dy.data, n as isize, 1, T::zero(), &mut dcols, n as isize, 1);
        if self.pointwise() {
            return Some(Tensor { c: self.cin, h: x.h, w: x.w, data: dcols });
        }
        let (oh, ph) = same_padding(x.h, self.k, self.stride);
        let (ow, pw) = same_padding(x.w, self.k, self.stride);
        let mut dx = Tensor::zeros(self.cin, x.h, x.w);
        for ci in 0..self.cin {
            let xw = x.w;
            let dxc = dx.channel_mut(ci);
            for ky in 0..self.k {
                let (ylo, yhi) = valid_range(ky, ph, self.stride, x.h, oh);
                for kx in 0..self.k {
                    let (xlo, xhi) = valid_range(kx, pw, self.stride, x.w, ow);
                    let row = &dcols[((ci * self.k + ky) * self.k + kx) * n..][..n];
                    for oy in ylo..yhi {
                        let iy = oy * self.stride + ky - ph;
                        for ox in xlo..xhi {
                            dxc[iy * xw + ox * self.stride + kx - pw] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
        Some(dx)
    }
}

/// Depthwise convolution without bias, weight `c x k x k`.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    pub w: ParamId,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
}

impl DepthwiseConv {
    pub fn new<T: Scalar>(init: &mut Init<T>, prefix: &str, group: &str, c: usize, k: usize, stride: usize) -> Self {
        let w = init.he(format!("{prefix}.weight"), group, vec![c, 1, k, k], k * k);
        Self { w, c, k, stride }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let (oh, ph) = same_padding(x.h, self.k, self.stride);
        let (ow, pw) = same_padding(x.w, self.k, self.stride);
        let w = p.get(self.w);
        let s = self.stride;
        let mut y = Tensor::zeros(self.c, oh, ow);
        for ch in 0..self.c {
            let xc = x.channel(ch);
            let yc = &mut y.data[ch * oh * ow..(ch + 1) * oh * ow];
            for ky in 0..self.k {
                let (ylo, yhi) = valid_range(ky, ph, s, x.h, oh);
                for kx in 0..self.k {
                    let wv = w[(ch * self.k + ky) * self.k + kx];
                    let (xlo, xhi) = valid_range(kx, pw, s, x.w, ow);
                    for oy in ylo..yhi {
                        let xrow = &xc[(oy * s + ky - ph) * x.w..];
                        let yrow = &mut yc[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let base = kx as isize - pw as isize;
                            for ox in xlo..xhi {
                                yrow[ox] += wv * xrow[(ox as isize + base) as usize];
                            }
                        } else {
                            for ox in xlo..xhi {
                                yrow[ox] += wv * xrow[ox * s + kx - pw];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (oh, ph) = same_padding(x.h, self.k, self.stride);
        let (ow, pw) = same_padding(x.w, self.k, self.stride);
        let s = self.stride;
        let want_w = grads.wants(self.w);
        let w = p.get(self.w);
        let mut dx = if need_dx { Some(Tensor::zeros(self.c, x.h, x.w)) } else { None };
        for ch in 0..self.c {
            let xc = x.channel(ch);
            let dyc = dy.channel(ch);
            for ky in 0..self.k {
                let (ylo, yhi) = valid_range(ky, ph, s, x.h, oh);
                for kx in 0..self.k {
                    let widx = (ch * self.k + ky) * self.k + kx;
                    let (xlo, xhi) = valid_range(kx, pw, s, x.w, ow);
                    if want_w {
                        let mut acc = T::zero();
                        for oy in ylo..yhi {
                            let xrow = &xc[(oy * s + ky - ph) * x.w..];
                            let dyrow = &dyc[oy * ow..];
                            for ox in xlo..xhi {
                                acc += dyrow[ox] * xrow[ox * s + kx - pw];
                            }
                        }
                        grads.g[self.w][widx] += acc;
                    }
                    if let Some(dx) = dx.as_mut() {
                        let wv = w[widx];
                        let xw = x.w;
                        let dxc = dx.channel_mut(ch);
                        for oy in ylo..yhi {
                            let dxrow = &mut dxc[(oy * s + ky - ph) * xw..];
                            let dyrow = &dyc[oy * ow..];
                            for ox in xlo..xhi {
                                dxrow[ox * s + kx - pw] += wv * dyrow[ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------- norm

/// Statistics gathered while calibrating normalization layers, keyed by the
/// mean buffer's id.
#[derive(Debug, Default)]
pub struct Calibration {
    pub targets: std::collections::HashSet<ParamId>,
    /// Per channel: (count, sum of sample means, sum of squared sample means,
    /// sum of sample variances).
    pub acc: HashMap<ParamId, Vec<(f64, f64, f64, f64)>>,
    /// Targets seen on 1×1 maps. A single position has no spatial variance,
    /// so these layers keep normalizing with their running statistics and
    /// are settled by repeated passes.
    pub pointwise: std::collections::HashSet<ParamId>,
}

/// Per-channel affine normalization with fixed running statistics. During
/// calibration each sample is normalized by its own statistics, which are
/// pooled into the running mean and variance afterwards. On 1×1 maps the
/// running statistics are used instead.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    pub c: usize,
}

impl Norm {
    pub fn new<T: Scalar>(init: &mut Init<T>, prefix: &str, group: &str, c: usize) -> Self {
        Self {
            gamma: init.filled(format!("{prefix}.gamma"), group, Role::Weight, c, 1.0),
            beta: init.filled(format!("{prefix}.beta"), group, Role::Weight, c, 0.0),
            mean: init.filled(format!("{prefix}.mean"), group, Role::Buffer, c, 0.0),
            var: init.filled(format!("{prefix}.var"), group, Role::Buffer, c, 1.0),
            c,
        }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>, calib: Option<&mut Calibration>) -> Tensor<T> {
        let (g, b) = (p.get(self.gamma), p.get(self.beta));
        let mut y = x.clone();
        let hw = x.hw();
        let calibrating = calib.as_ref().is_some_and(|c| c.targets.contains(&self.mean));
        let mut stats = Vec::new();
        for ch in 0..self.c {
            if calibrating {
                let xs = x.channel(ch);
                let m = xs.iter().map(|v| v.f64()).sum::<f64>() / hw as f64;
                let v = xs.iter().map(|v| (v.f64() - m).powi(2)).sum::<f64>() / hw as f64;
                stats.push((m, v));
            }
            let (m, v) = if calibrating && hw > 1 {
                let (m, v) = stats[ch];
                (T::of(m), T::of(v))
            } else {
                (p.get(self.mean)[ch], p.get(self.var)[ch])
            };
            let scale = g[ch] / (v + T::of(NORM_EPS)).sqrt();
            let shift = b[ch] - m * scale;
            for v in y.channel_mut(ch) {
                *v = *v * scale + shift;
            }
        }
        if let (true, Some(c)) = (calibrating, calib) {
            if hw == 1 {
                c.pointwise.insert(self.mean);
            }
            let acc = c.acc.entry(self.mean).or_insert_with(|| vec![(0.0, 0.0, 0.0, 0.0); self.c]);
            for (a, (m, v)) in acc.iter_mut().zip(stats) {
                a.0 += 1.0;
                a.1 += m;
                a.2 += m * m;
                a.3 += v;
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let (g, mean, var) = (p.get(self.gamma), p.get(self.mean), p.get(self.var));
        let (wg, wb) = (grads.wants(self.gamma), grads.wants(self.beta));
        for ch in 0..self.c {
            let inv = T::one() / (var[ch] + T::of(NORM_EPS)).sqrt();
            if wg || wb {
                let (mut sg, mut sb) = (T::zero(), T::zero());
                for (&d, &xv) in dy.channel(ch).iter().zip(x.channel(ch)) {
                    sg += d * (xv - mean[ch]) * inv;
                    sb += d;
                }
                if wg {
                    grads.g[self.gamma][ch] += sg;
                }
                if wb {
                    grads.g[self.beta][ch] += sb;
                }
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = dy.clone();
        for ch in 0..self.c {
            let s = g[ch] / (var[ch] + T::of(NORM_EPS)).sqrt();
            for v in dx.channel_mut(ch) {
                *v *= s;
            }
        }
        Some(dx)
    }

    /// Writes pooled calibration statistics into the running buffers.
    pub fn apply_calibration<T: Scalar>(&self, p: &mut ParamStore<T>, calib: &Calibration) {
        let Some(acc) = calib.acc.get(&self.mean) else { return };
        for (ch, &(n, sm, smm, sv)) in acc.iter().enumerate() {
            let m = sm / n;
            // total variance = mean within-sample variance + variance of sample means
            let v = sv / n + (smm / n - m * m).max(0.0);
            p.tensors[self.mean].data[ch] = T::of(m);
            p.tensors[self.var].data[ch] = T::of(v);
        }
    }
}

// ---------------------------------------------------------------- activations

#[inline]
pub fn swish<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn swish_tensor<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor { c: x.c, h: x.h, w: x.w, data: x.data.iter().map(|&v| swish(v)).collect() }
}

/// `dy * swish'(z)` in place on `dy`.
pub fn swish_backward<T: Scalar>(z: &Tensor<T>, mut dy: Tensor<T>) -> Tensor<T> {
    for (d, &v) in dy.data.iter_mut().zip(&z.data) {
        *d *= swish_grad(v);
    }
    dy
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let n = T::of(x.hw() as f64);
    (0..x.c).map(|c| x.channel(c).iter().copied().sum::<T>() / n).collect()
}

pub fn global_avg_pool_backward<T: Scalar>(dv: &[T], c: usize, h: usize, w: usize) -> Tensor<T> {
    let n = T::of((h * w) as f64);
    let mut dx = Tensor::zeros(c, h, w);
    for (ch, &d) in dv.iter().enumerate() {
        dx.channel_mut(ch).fill(d / n);
    }
    dx
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of softmax(logits) against `label`, and its logit gradient.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= T::one();
    (loss, grad)
}

// ---------------------------------------------------------------- dense

#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    pub fn new<T: Scalar>(init: &mut Init<T>, prefix: &str, group: &str, inp: usize, out: usize) -> Self {
        let w = init.he(format!("{prefix}.weight"), group, vec![out, inp], inp);
        let b = init.filled(format!("{prefix}.bias"), group, Role::Weight, out, 0.0);
        Self { w, b, inp, out }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, v: &[T]) -> Vec<T> {
        let (w, b) = (p.get(self.w), p.get(self.b));
        (0..self.out).map(|o| b[o] + w[o * self.inp..(o + 1) * self.inp].iter().zip(v).map(|(&a, &x)| a * x).sum::<T>()).collect()
    }

    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, v: &[T], dy: &[T], grads: &mut Grads<T>, need_dx: bool) -> Option<Vec<T>> {
        if grads.wants(self.w) {
            let gw = &mut grads.g[self.w];
            for o in 0..self.out {
                for i in 0..self.inp {
                    gw[o * self.inp + i] += dy[o] * v[i];
                }
            }
        }
        if grads.wants(self.b) {
            for (g, &d) in grads.g[self.b].iter_mut().zip(dy) {
                *g += d;
            }
        }
        need_dx.then(|| {
            let w = p.get(self.w);
            (0..self.inp).map(|i| (0..self.out).map(|o| w[o * self.inp + i] * dy[o]).sum()).collect()
        })
    }
}

// ---------------------------------------------------------------- squeeze-excite

#[derive(Debug, Clone)]
pub struct SqueezeExcite {
    pub reduce: Dense,
    pub expand: Dense,
}

pub struct SeCache<T> {
    pooled: Vec<T>,
    z1: Vec<T>,
    a1: Vec<T>,
    gate: Vec<T>,
}

impl SqueezeExcite {
    pub fn new<T: Scalar>(init: &mut Init<T>, prefix: &str, group: &str, c: usize, r: usize) -> Self {
        Self {
            reduce: Dense::new(init, &format!("{prefix}.reduce"), group, c, r),
            expand: Dense::new(init, &format!("{prefix}.expand"), group, r, c),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, SeCache<T>) {
        let pooled = global_avg_pool(x);
        let z1 = self.reduce.forward(p, &pooled);
        let a1: Vec<T> = z1.iter().map(|&v| swish(v)).collect();
        let gate: Vec<T> = self.expand.forward(p, &a1).into_iter().map(sigmoid).collect();
        let mut y = x.clone();
        for (ch, &g) in gate.iter().enumerate() {
            for v in y.channel_mut(ch) {
                *v *= g;
            }
        }
        (y, SeCache { pooled, z1, a1, gate })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        cache: &SeCache<T>,
        dy: &Tensor<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let c = x.c;
        let dgate: Vec<T> = (0..c).map(|ch| dy.channel(ch).iter().zip(x.channel(ch)).map(|(&d, &v)| d * v).sum()).collect();
        let dz2: Vec<T> = dgate.iter().zip(&cache.gate).map(|(&d, &g)| d * g * (T::one() - g)).collect();
        let reduce_needed = grads.wants(self.reduce.w) || grads.wants(self.reduce.b) || need_dx;
        let da1 = self.expand.backward(p, &cache.a1, &dz2, grads, reduce_needed);
        let dpool = da1.and_then(|da1| {
            let dz1: Vec<T> = da1.iter().zip(&cache.z1).map(|(&d, &z)| d * swish_grad(z)).collect();
            self.reduce.backward(p, &cache.pooled, &dz1, grads, need_dx)
        });
        if !need_dx {
            return None;
        }
        let dpool = dpool.expect("requested");
        let n = T::of(x.hw() as f64);
        let mut dx = dy.clone();
        for ch in 0..c {
            let (g, extra) = (cache.gate[ch], dpool[ch] / n);
            for v in dx.channel_mut(ch) {
                *v = *v * g + extra;
            }
        }
        Some(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_examples() {
        assert_eq!(same_padding(36, 3, 2), (18, 0));
        assert_eq!(same_padding(9, 3, 2), (5, 1));
        assert_eq!(same_padding(7, 5, 1), (7, 2));
        assert_eq!(same_padding(224, 3, 2), (112, 0));
        assert_eq!(same_padding(1, 5, 2), (1, 2));
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for input in 1..9 {
            for k in [1, 3, 5] {
                for s in [1, 2] {
                    let (out, pad) = same_padding(input, k, s);
                    for tap in 0..k {
                        let want: Vec<usize> = (0..out)
                            .filter(|&o| {
                                let i = (o * s + tap) as isize - pad as isize;
                                i >= 0 && (i as usize) < input
                            })
                            .collect();
                        let (lo, hi) = valid_range(tap, pad, s, input, out);
                        assert_eq!((lo..hi).collect::<Vec<_>>(), want, "in={input} k={k} s={s} tap={tap}");
                    }
                }
            }
        }
    }

    fn store_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut s = ParamStore::default();
        let ids = values.iter().map(|(n, sh, d)| s.add(n.to_string(), "g", Role::Weight, sh.clone(), d.clone())).collect();
        (s, ids)
    }

    /// Direct definition of a zero-padded strided convolution.
    fn conv_oracle(x: &Tensor<f64>, w: &[f64], cout: usize, k: usize, s: usize) -> Tensor<f64> {
        let (oh, ph) = same_padding(x.h, k, s);
        let (ow, pw) = same_padding(x.w, k, s);
        let mut y = Tensor::zeros(cout, oh, ow);
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..x.c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - ph as isize;
                                let ix = (ox * s + kx) as isize - pw as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w {
                                    acc += w[((co * x.c + ci) * k + ky) * k + kx] * x.data[(ci * x.h + iy as usize) * x.w + ix as usize];
                                }
                            }
                        }
                    }
                    y.data[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_definition() {
        for (cin, cout, k, s, h, w) in [(2, 3, 3, 2, 5, 4), (1, 2, 3, 1, 4, 4), (3, 2, 1, 1, 3, 2), (2, 2, 5, 2, 7, 6)] {
            let x = Tensor::from_vec(cin, h, w, (0..cin * h * w).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
            let wv: Vec<f64> = (0..cout * cin * k * k).map(|v| (v as f64 * 0.53).cos()).collect();
            let (store, ids) = store_with(&[("w", vec![cout, cin, k, k], wv.clone())]);
            let conv = Conv { w: ids[0], cin, cout, k, stride: s };
            let y = conv.forward(&store, &x);
            let want = conv_oracle(&x, &wv, cout, k, s);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn depthwise_matches_per_channel_conv() {
        for (c, k, s, h, w) in [(3, 3, 1, 5, 4), (2, 5, 2, 9, 7), (1, 3, 2, 2, 2)] {
            let x = Tensor::from_vec(c, h, w, (0..c * h * w).map(|v| (v as f64 * 0.71).sin()).collect()).unwrap();
            let wv: Vec<f64> = (0..c * k * k).map(|v| (v as f64 * 0.29).cos()).collect();
            let (store, ids) = store_with(&[("w", vec![c, 1, k, k], wv.clone())]);
            let y = DepthwiseConv { w: ids[0], c, k, stride: s }.forward(&store, &x);
            for ch in 0..c {
                let xc = Tensor::from_vec(1, h, w, x.channel(ch).to_vec()).unwrap();
                let want = conv_oracle(&xc, &wv[ch * k * k..(ch + 1) * k * k], 1, k, s);
                for (a, b) in y.channel(ch).iter().zip(&want.data) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_ce_gradient() {
        let z = [0.3f64, -1.2, 2.0];
        let (loss, g) = softmax_cross_entropy(&z, 2);
        let p = softmax(&z);
        assert!((loss + p[2].ln()).abs() < 1e-12);
        assert!((g.iter().sum::<f64>()).abs() < 1e-12);
        assert!((g[2] - (p[2] - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn calibration_pools_sample_statistics() {
        let mut s = ParamStore::<f64>::default();
        let mut init = Init { store: &mut s, seed: 0 };
        let norm = Norm::new(&mut init, "n", "g", 1);
        let mut calib = Calibration::default();
        calib.targets.insert(norm.mean);
        for vals in [vec![1.0, 3.0], vec![5.0, 7.0]] {
            let x = Tensor::from_vec(1, 1, 2, vals).unwrap();
            let y = norm.forward(&s, &x, Some(&mut calib));
            assert!((y.data[0] + y.data[1]).abs() < 1e-12);
        }
        norm.apply_calibration(&mut s, &calib);
        // pooled over all four values: mean 4, variance 5
        assert_eq!(s.get(norm.mean)[0], 4.0);
        assert_eq!(s.get(norm.var)[0], 5.0);
    }
}
