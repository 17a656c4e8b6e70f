//! Layer primitives with explicit forward caches and backward passes.
//!
//! Convolutional activations use a channel-major `C × N × H × W` layout so a
//! convolution over a chunk of samples is a single matrix product and batch
//! normalization reduces over one contiguous run per channel.

use rand::Rng;

use super::real::{gemm, Real, Strides};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GELU, tanh form.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let k = T::c(SQRT_2_OVER_PI);
    let c = T::c(GELU_CUBIC);
    let half = T::c(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh_fast())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let k = T::c(SQRT_2_OVER_PI);
    let c = T::c(GELU_CUBIC);
    let half = T::c(0.5);
    let t = (k * (x + c * x * x * x)).tanh_fast();
    half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::c(3.0) * c * x * x)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn uniform_init<T: Real, R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..len)
        .map(|_| T::c(rng.random_range(-bound..bound)))
        .collect()
}

/// Same-padded, stride-1 2-D convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    /// `out_ch × in_ch × kernel × kernel`.
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Upper bound on im2col buffer entries per matrix product.
const IM2COL_BUDGET: usize = 1 << 20;
/// Spatial convolutions with at most this many channel pairs skip im2col.
const DIRECT_MAX_PAIRS: usize = 256;

#[inline]
fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Dot product with independent lane accumulators so it vectorizes.
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 16;
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (u, v) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += u[l] * v[l];
        }
    }
    acc.iter().copied().sum::<T>() + tail
}

/// Inverse of [`pad_planes`]: copies the interiors of padded planes.
fn crop_planes<T: Real>(xp: &[T], planes: usize, h: usize, w: usize, p: usize, out: &mut [T]) {
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    for (src, dst) in xp.chunks_exact(ph * pw).zip(out.chunks_exact_mut(h * w)).take(planes) {
        for y in 0..h {
            dst[y * w..(y + 1) * w].copy_from_slice(&src[(y + p) * pw + p..(y + p) * pw + p + w]);
        }
    }
}

/// Copies `planes` planes of `h × w` into zero-padded planes with border `p`.
fn pad_planes<T: Real>(x: &[T], planes: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); planes * ph * pw];
    for (src, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(ph * pw)) {
        for y in 0..h {
            dst[(y + p) * pw + p..(y + p) * pw + p + w].copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    out
}

impl<T: Real> Conv2d<T> {
    pub fn init<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize, kernel: usize, bias: bool) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_ch * kernel * kernel;
        Self {
            in_ch,
            out_ch,
            kernel,
            weight: uniform_init(rng, out_ch * fan_in, fan_in),
            bias: bias.then(|| vec![T::zero(); out_ch]),
        }
    }

    fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn chunk(&self, hw: usize) -> usize {
        (IM2COL_BUDGET / (self.patch() * hw).max(1)).max(1)
    }

    /// Gathers the receptive fields of samples `n0..n0+cnt` into
    /// `col[patch × (cnt·h·w)]`.
    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, x: &[T], n: usize, h: usize, w: usize, n0: usize, cnt: usize, col: &mut [T]) {
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;
        let cols = cnt * hw;
        for ci in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * cols;
                    let x0 = pad.saturating_sub(kx);
                    let x1 = (w + pad).saturating_sub(kx).min(w);
                    for s in 0..cnt {
                        let src = &x[(ci * n + n0 + s) * hw..(ci * n + n0 + s + 1) * hw];
                        let dst = &mut col[row + s * hw..row + (s + 1) * hw];
                        for y in 0..h {
                            let out_row = &mut dst[y * w..(y + 1) * w];
                            let iy = y as isize + ky as isize - pad as isize;
                            if iy < 0 || iy >= h as isize || x0 >= x1 {
                                out_row.fill(T::zero());
                                continue;
                            }
                            let in_row = &src[iy as usize * w..(iy as usize + 1) * w];
                            out_row[..x0].fill(T::zero());
                            out_row[x1..].fill(T::zero());
                            let off = x0 + kx - pad;
                            out_row[x0..x1].copy_from_slice(&in_row[off..off + (x1 - x0)]);
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, col: &[T], n: usize, h: usize, w: usize, n0: usize, cnt: usize, dx: &mut [T]) {
        let k = self.kernel;
        let pad = k / 2;
        let hw = h * w;
        let cols = cnt * hw;
        for ci in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ci * k + ky) * k + kx) * cols;
                    let x0 = pad.saturating_sub(kx);
                    let x1 = (w + pad).saturating_sub(kx).min(w);
                    if x0 >= x1 {
                        continue;
                    }
                    for s in 0..cnt {
                        let src = &col[row + s * hw..row + (s + 1) * hw];
                        let dst = &mut dx[(ci * n + n0 + s) * hw..(ci * n + n0 + s + 1) * hw];
                        for y in 0..h {
                            let iy = y as isize + ky as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let off = x0 + kx - pad;
                            let in_row = &mut dst[iy as usize * w + off..iy as usize * w + off + (x1 - x0)];
                            for (d, &v) in in_row.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn direct(&self) -> bool {
        #[cfg(test)]
        if tests::FORCE_GEMM.with(|f| f.get()) {
            return false;
        }
        self.kernel > 1 && self.in_ch * self.out_ch <= DIRECT_MAX_PAIRS
    }

    /// Padded geometry shared by the direct paths: plane length, and the
    /// range of flat positions whose every tap stays inside the buffer.
    fn direct_geometry(&self, n: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
        let p = self.kernel / 2;
        let pw = w + 2 * p;
        let len = n * (h + 2 * p) * pw;
        let margin = p * pw + p;
        (p, pw, len, margin)
    }

    /// Flat offset of tap `t` relative to the output position.
    fn tap_offset(&self, t: usize, pw: usize, margin: usize) -> isize {
        let k = self.kernel;
        ((t / k) * pw + t % k) as isize - margin as isize
    }

    // Convolution over zero-padded planes laid end to end: every tap becomes
    // one long shifted axpy over the whole batch. Border positions collect
    // garbage and are cropped.
    fn direct_forward(&self, x: &[T], n: usize, h: usize, w: usize, out: &mut [T]) {
        let (p, pw, len, margin) = self.direct_geometry(n, h, w);
        let taps = self.kernel * self.kernel;
        let xp = pad_planes(x, self.in_ch * n, h, w, p);
        let mut yp = vec![T::zero(); len];
        let (lo, hi) = (margin, len - margin);
        for co in 0..self.out_ch {
            yp.fill(T::zero());
            for ci in 0..self.in_ch {
                let src = &xp[ci * len..(ci + 1) * len];
                let wts = &self.weight[(co * self.in_ch + ci) * taps..(co * self.in_ch + ci + 1) * taps];
                for (t, &wv) in wts.iter().enumerate() {
                    let s0 = (lo as isize + self.tap_offset(t, pw, margin)) as usize;
                    axpy(wv, &src[s0..s0 + hi - lo], &mut yp[lo..hi]);
                }
            }
            crop_planes(&yp, n, h, w, p, &mut out[co * n * h * w..(co + 1) * n * h * w]);
        }
    }

    /// Weight gradient and optional input gradient of the direct path.
    #[allow(clippy::too_many_arguments)]
    fn direct_backward(&self, x: &[T], n: usize, h: usize, w: usize, dout: &[T], gw: &mut [T], want_dx: bool) -> Option<Vec<T>> {
        let (p, pw, len, margin) = self.direct_geometry(n, h, w);
        let taps = self.kernel * self.kernel;
        let xp = pad_planes(x, self.in_ch * n, h, w, p);
        let gp = pad_planes(dout, self.out_ch * n, h, w, p);
        let (lo, hi) = (margin, len - margin);
        for co in 0..self.out_ch {
            let g = &gp[co * len + lo..co * len + hi];
            for ci in 0..self.in_ch {
                let src = &xp[ci * len..(ci + 1) * len];
                for t in 0..taps {
                    let s0 = (lo as isize + self.tap_offset(t, pw, margin)) as usize;
                    gw[(co * self.in_ch + ci) * taps + t] += dot(g, &src[s0..s0 + hi - lo]);
                }
            }
        }
        if !want_dx {
            return None;
        }
        let mut dxp = vec![T::zero(); len];
        let mut dx = vec![T::zero(); self.in_ch * n * h * w];
        for ci in 0..self.in_ch {
            dxp.fill(T::zero());
            for co in 0..self.out_ch {
                let g = &gp[co * len + lo..co * len + hi];
                let wts = &self.weight[(co * self.in_ch + ci) * taps..(co * self.in_ch + ci + 1) * taps];
                for (t, &wv) in wts.iter().enumerate() {
                    let s0 = (lo as isize + self.tap_offset(t, pw, margin)) as usize;
                    axpy(wv, g, &mut dxp[s0..s0 + hi - lo]);
                }
            }
            crop_planes(&dxp, n, h, w, p, &mut dx[ci * n * h * w..(ci + 1) * n * h * w]);
        }
        Some(dx)
    }

    /// `x`: `in_ch × n × h × w` → `out_ch × n × h × w`.
    pub fn forward(&self, x: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
        let hw = h * w;
        let total = n * hw;
        debug_assert_eq!(x.len(), self.in_ch * total);
        let mut out = vec![T::zero(); self.out_ch * total];
        let patch = self.patch();
        if self.direct() {
            self.direct_forward(x, n, h, w, &mut out);
        } else if self.kernel == 1 {
            gemm(
                self.out_ch,
                self.in_ch,
                total,
                T::one(),
                &self.weight,
                Strides(self.in_ch, 1),
                x,
                Strides(total, 1),
                T::zero(),
                &mut out,
                Strides(total, 1),
            );
        } else {
            let chunk = self.chunk(hw);
            let mut col = vec![T::zero(); patch * chunk.min(n) * hw];
            let mut n0 = 0;
            while n0 < n {
                let cnt = chunk.min(n - n0);
                let cols = cnt * hw;
                self.im2col(x, n, h, w, n0, cnt, &mut col[..patch * cols]);
                gemm(
                    self.out_ch,
                    patch,
                    cols,
                    T::one(),
                    &self.weight,
                    Strides(patch, 1),
                    &col[..patch * cols],
                    Strides(cols, 1),
                    T::zero(),
                    &mut out[n0 * hw..],
                    Strides(total, 1),
                );
                n0 += cnt;
            }
        }
        if let Some(bias) = &self.bias {
            for (row, &b) in out.chunks_exact_mut(total).zip(bias) {
                row.iter_mut().for_each(|v| *v += b);
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `want_dx`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[T],
        n: usize,
        h: usize,
        w: usize,
        dout: &[T],
        grad: &mut Self,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let hw = h * w;
        let total = n * hw;
        let patch = self.patch();
        if let Some(gb) = &mut grad.bias {
            for (g, row) in gb.iter_mut().zip(dout.chunks_exact(total)) {
                *g += row.iter().copied().sum::<T>();
            }
        }
        if self.direct() {
            return self.direct_backward(x, n, h, w, dout, &mut grad.weight, want_dx);
        }
        if self.kernel == 1 {
            gemm(
                self.out_ch,
                total,
                self.in_ch,
                T::one(),
                dout,
                Strides(total, 1),
                x,
                Strides(1, total),
                T::one(),
                &mut grad.weight,
                Strides(self.in_ch, 1),
            );
            return want_dx.then(|| {
                let mut dx = vec![T::zero(); self.in_ch * total];
                gemm(
                    self.in_ch,
                    self.out_ch,
                    total,
                    T::one(),
                    &self.weight,
                    Strides(1, self.in_ch),
                    dout,
                    Strides(total, 1),
                    T::zero(),
                    &mut dx,
                    Strides(total, 1),
                );
                dx
            });
        }
        let chunk = self.chunk(hw);
        let mut col = vec![T::zero(); patch * chunk.min(n) * hw];
        let mut dcol = if want_dx { col.clone() } else { Vec::new() };
        let mut dx = want_dx.then(|| vec![T::zero(); self.in_ch * total]);
        let mut n0 = 0;
        while n0 < n {
            let cnt = chunk.min(n - n0);
            let cols = cnt * hw;
            self.im2col(x, n, h, w, n0, cnt, &mut col[..patch * cols]);
            gemm(
                self.out_ch,
                cols,
                patch,
                T::one(),
                &dout[n0 * hw..],
                Strides(total, 1),
                &col[..patch * cols],
                Strides(1, cols),
                T::one(),
                &mut grad.weight,
                Strides(patch, 1),
            );
            if let Some(dx) = dx.as_mut() {
                gemm(
                    patch,
                    self.out_ch,
                    cols,
                    T::one(),
                    &self.weight,
                    Strides(1, patch),
                    &dout[n0 * hw..],
                    Strides(total, 1),
                    T::zero(),
                    &mut dcol[..patch * cols],
                    Strides(cols, 1),
                );
                self.col2im(&dcol[..patch * cols], n, h, w, n0, cnt, dx);
            }
            n0 += cnt;
        }
        dx
    }
}

/// Per-channel batch normalization over `N × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

/// Batch statistics of one train-mode normalization, for running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    pub var_unbiased: Vec<f64>,
}

pub(crate) struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn forward_train(&self, x: &[T], per: usize) -> (Vec<T>, BnCache<T>, BnBatchStats) {
        let c = self.channels();
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = Vec::with_capacity(c);
        let mut stats = BnBatchStats {
            mean: Vec::with_capacity(c),
            var_unbiased: Vec::with_capacity(c),
        };
        for ch in 0..c {
            let xs = &x[ch * per..(ch + 1) * per];
            let mean = xs.iter().map(|v| v.f64()).sum::<f64>() / per as f64;
            let var = xs
                .iter()
                .map(|v| {
                    let d = v.f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / per as f64;
            let istd = 1.0 / (var + BN_EPS).sqrt();
            let (m, s) = (T::c(mean), T::c(istd));
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            let xh = &mut xhat[ch * per..(ch + 1) * per];
            let ys = &mut y[ch * per..(ch + 1) * per];
            for ((xh, yv), &xv) in xh.iter_mut().zip(ys.iter_mut()).zip(xs) {
                *xh = (xv - m) * s;
                *yv = g * *xh + b;
            }
            inv_std.push(s);
            stats.mean.push(mean);
            stats
                .var_unbiased
                .push(if per > 1 { var * per as f64 / (per - 1) as f64 } else { var });
        }
        (y, BnCache { xhat, inv_std }, stats)
    }

    pub(crate) fn forward_eval(&self, x: &[T], per: usize) -> Vec<T> {
        let mut y = vec![T::zero(); x.len()];
        for ch in 0..self.channels() {
            let s = T::one() / (self.running_var[ch] + T::c(BN_EPS)).sqrt();
            let scale = self.gamma[ch] * s;
            let shift = self.beta[ch] - self.running_mean[ch] * scale;
            for (yv, &xv) in y[ch * per..(ch + 1) * per]
                .iter_mut()
                .zip(&x[ch * per..(ch + 1) * per])
            {
                *yv = xv * scale + shift;
            }
        }
        y
    }

    pub(crate) fn backward(&self, cache: &BnCache<T>, dy: &[T], per: usize, grad: &mut Self) -> Vec<T> {
        let mut dx = vec![T::zero(); dy.len()];
        let inv_m = 1.0 / per as f64;
        for ch in 0..self.channels() {
            let dys = &dy[ch * per..(ch + 1) * per];
            let xh = &cache.xhat[ch * per..(ch + 1) * per];
            let mut sum_dy = 0.0f64;
            let mut sum_dy_xh = 0.0f64;
            for (&d, &x) in dys.iter().zip(xh) {
                sum_dy += d.f64();
                sum_dy_xh += (d * x).f64();
            }
            grad.gamma[ch] += T::c(sum_dy_xh);
            grad.beta[ch] += T::c(sum_dy);
            let g = self.gamma[ch];
            let scale = g * cache.inv_std[ch];
            let mean_dy = T::c(sum_dy * inv_m);
            let mean_dy_xh = T::c(sum_dy_xh * inv_m);
            for ((o, &d), &x) in dx[ch * per..(ch + 1) * per].iter_mut().zip(dys).zip(xh) {
                *o = scale * (d - mean_dy - x * mean_dy_xh);
            }
        }
        dx
    }

    pub(crate) fn apply_stats(&mut self, stats: &BnBatchStats, momentum: f64) {
        for ch in 0..self.channels() {
            let rm = self.running_mean[ch].f64();
            let rv = self.running_var[ch].f64();
            self.running_mean[ch] = T::c((1.0 - momentum) * rm + momentum * stats.mean[ch]);
            self.running_var[ch] = T::c((1.0 - momentum) * rv + momentum * stats.var_unbiased[ch]);
        }
    }
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

const BLUR_TAPS: [f64; 3] = [0.25, 0.5, 0.25];

/// Output extent of a stride-2 blur pool.
pub fn blur_out(n: usize) -> usize {
    n.div_ceil(2)
}

/// Source indices of the three taps for every output position.
fn blur_taps(n: usize) -> Vec<[usize; 3]> {
    (0..blur_out(n))
        .map(|o| {
            let c = 2 * o as isize;
            [reflect(c - 1, n), c as usize, reflect(c + 1, n)]
        })
        .collect()
}

/// Separable `[1,2,1]/4 ⊗ [1,2,1]/4` blur with reflect padding, sampled at
/// stride 2. `x` holds `planes` planes of `h × w`.
pub fn blur_down<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (blur_out(h), blur_out(w));
    let (tx, ty) = (blur_taps(w), blur_taps(h));
    let [t0, t1, t2] = BLUR_TAPS.map(T::c);
    let mut out = vec![T::zero(); planes * oh * ow];
    // vertical first: whole rows vectorize, and the gathering horizontal
    // pass then runs on half as many rows
    let mut tmp = vec![T::zero(); oh * w];
    for (src, dst) in x.chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for (trow, &[a, b, c]) in tmp.chunks_exact_mut(w).zip(&ty) {
            let (ra, rb, rc) = (&src[a * w..(a + 1) * w], &src[b * w..(b + 1) * w], &src[c * w..(c + 1) * w]);
            for (((o, &va), &vb), &vc) in trow.iter_mut().zip(ra).zip(rb).zip(rc) {
                *o = t0 * va + t1 * vb + t2 * vc;
            }
        }
        for (row, drow) in tmp.chunks_exact(w).zip(dst.chunks_exact_mut(ow)) {
            for (o, &[a, b, c]) in drow.iter_mut().zip(&tx) {
                *o = t0 * row[a] + t1 * row[b] + t2 * row[c];
            }
        }
    }
    out
}

pub fn blur_down_backward<T: Real>(dout: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (blur_out(h), blur_out(w));
    let (tx, ty) = (blur_taps(w), blur_taps(h));
    let taps = BLUR_TAPS.map(T::c);
    let mut dx = vec![T::zero(); planes * h * w];
    let mut dtmp = vec![T::zero(); oh * w];
    for (d, dst) in dout.chunks_exact(oh * ow).zip(dx.chunks_exact_mut(h * w)) {
        dtmp.fill(T::zero());
        for (drow, trow) in d.chunks_exact(ow).zip(dtmp.chunks_exact_mut(w)) {
            for (&g, cols) in drow.iter().zip(&tx) {
                for (tap, &c) in taps.iter().zip(cols) {
                    trow[c] += *tap * g;
                }
            }
        }
        for (trow, rows) in dtmp.chunks_exact(w).zip(&ty) {
            for (tap, &r) in taps.iter().zip(rows) {
                for (o, &g) in dst[r * w..(r + 1) * w].iter_mut().zip(trow) {
                    *o += *tap * g;
                }
            }
        }
    }
    dx
}

/// Fully connected layer on row-major `n × inp` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inp: usize,
    pub out: usize,
    /// `out × inp`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn init<R: Rng>(rng: &mut R, inp: usize, out: usize) -> Self {
        Self {
            inp,
            out,
            weight: uniform_init(rng, out * inp, inp),
            bias: vec![T::zero(); out],
        }
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), n * self.inp);
        let mut y = Vec::with_capacity(n * self.out);
        for _ in 0..n {
            y.extend_from_slice(&self.bias);
        }
        gemm(
            n,
            self.inp,
            self.out,
            T::one(),
            x,
            Strides(self.inp, 1),
            &self.weight,
            Strides(1, self.inp),
            T::one(),
            &mut y,
            Strides(self.out, 1),
        );
        y
    }

    pub fn backward(&self, x: &[T], n: usize, dy: &[T], grad: &mut Self, want_dx: bool) -> Option<Vec<T>> {
        gemm(
            self.out,
            n,
            self.inp,
            T::one(),
            dy,
            Strides(1, self.out),
            x,
            Strides(self.inp, 1),
            T::one(),
            &mut grad.weight,
            Strides(self.inp, 1),
        );
        for row in dy.chunks_exact(self.out) {
            for (g, &d) in grad.bias.iter_mut().zip(row) {
                *g += d;
            }
        }
        want_dx.then(|| {
            let mut dx = vec![T::zero(); n * self.inp];
            gemm(
                n,
                self.out,
                self.inp,
                T::one(),
                dy,
                Strides(self.out, 1),
                &self.weight,
                Strides(self.inp, 1),
                T::zero(),
                &mut dx,
                Strides(self.inp, 1),
            );
            dx
        })
    }
}
