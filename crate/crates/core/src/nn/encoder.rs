//! Convolutional feature encoder shared by the image and gaze branches.

use rand::Rng;

use super::layers::{blur_down, blur_down_backward, blur_out, gelu, gelu_grad, BatchNorm, BnBatchStats, BnCache, Conv2d, Dense};
use super::real::Real;
use super::Mode;

/// One convolution stage: conv → batch norm → GELU → blur pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub in_ch: usize,
    pub input_size: usize,
    /// Parameter-free blur-pool downsamplings applied to the input.
    pub stem: usize,
    pub stages: Vec<ConvStage<T>>,
    pub pointwise: Vec<Conv2d<T>>,
    pub dense: Dense<T>,
}

/// Geometry of an encoder: channel counts and kernel size.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EncoderShape<'a> {
    pub in_ch: usize,
    pub input_size: usize,
    pub stem: usize,
    pub stages: &'a [usize],
    pub kernel: usize,
    pub pointwise: &'a [usize],
    pub features: usize,
}

struct StageCache<T> {
    x: Vec<T>,
    h: usize,
    w: usize,
    bn: BnCache<T>,
}

pub(crate) struct EncoderCache<T> {
    n: usize,
    stages: Vec<StageCache<T>>,
    /// Inputs and pre-activations of the pointwise convolutions.
    pointwise: Vec<(Vec<T>, Vec<T>)>,
    side: usize,
    flat: Vec<T>,
    dense_pre: Vec<T>,
}

/// `N × C × H × W` → `C × N × H × W`.
fn to_channel_major<T: Real>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            out[(ch * n + s) * hw..(ch * n + s + 1) * hw].copy_from_slice(&x[(s * c + ch) * hw..(s * c + ch + 1) * hw]);
        }
    }
    out
}

impl<T: Real> Encoder<T> {
    pub(crate) fn init<R: Rng>(rng: &mut R, shape: EncoderShape<'_>) -> Self {
        let mut stages = Vec::with_capacity(shape.stages.len());
        let mut ch = shape.in_ch;
        for &out in shape.stages {
            stages.push(ConvStage {
                conv: Conv2d::init(rng, ch, out, shape.kernel, false),
                bn: BatchNorm::new(out),
            });
            ch = out;
        }
        let mut pointwise = Vec::with_capacity(shape.pointwise.len());
        for &out in shape.pointwise {
            pointwise.push(Conv2d::init(rng, ch, out, 1, true));
            ch = out;
        }
        let side = Self::output_side(shape.input_size, shape.stem + shape.stages.len());
        let dense = Dense::init(rng, ch * side * side, shape.features);
        Self {
            in_ch: shape.in_ch,
            input_size: shape.input_size,
            stem: shape.stem,
            stages,
            pointwise,
            dense,
        }
    }

    fn output_side(mut side: usize, pools: usize) -> usize {
        for _ in 0..pools {
            side = blur_out(side);
        }
        side
    }

    pub fn features(&self) -> usize {
        self.dense.out
    }

    pub fn param_count(&self) -> usize {
        let stages: usize = self
            .stages
            .iter()
            .map(|s| s.conv.weight.len() + 2 * s.bn.channels())
            .sum();
        let pw: usize = self
            .pointwise
            .iter()
            .map(|c| c.weight.len() + c.bias.as_ref().map_or(0, Vec::len))
            .sum();
        stages + pw + self.dense.weight.len() + self.dense.bias.len()
    }

    /// `x` holds `n` samples laid out `N × in_ch × S × S`. Returns row-major
    /// `n × features`, the backward cache when requested, and batch-norm
    /// statistics in train mode.
    pub(crate) fn forward(
        &self,
        x: &[T],
        n: usize,
        mode: Mode,
        keep: bool,
    ) -> (Vec<T>, Option<EncoderCache<T>>, Vec<BnBatchStats>) {
        let mut side = self.input_size;
        debug_assert_eq!(x.len(), n * self.in_ch * side * side);
        let mut act = to_channel_major(x, n, self.in_ch, side * side);
        for _ in 0..self.stem {
            act = blur_down(&act, self.in_ch * n, side, side);
            side = blur_out(side);
        }
        let mut stats = Vec::new();
        let mut stage_caches = Vec::new();
        for stage in &self.stages {
            let ch = stage.conv.out_ch;
            let per = n * side * side;
            let z = stage.conv.forward(&act, n, side, side);
            let mut v = match mode {
                Mode::Train => {
                    let (v, cache, st) = stage.bn.forward_train(&z, per);
                    stats.push(st);
                    if keep {
                        stage_caches.push(StageCache {
                            x: std::mem::take(&mut act),
                            h: side,
                            w: side,
                            bn: cache,
                        });
                    }
                    v
                }
                Mode::Eval => stage.bn.forward_eval(&z, per),
            };
            v.iter_mut().for_each(|e| *e = gelu(*e));
            act = blur_down(&v, ch * n, side, side);
            side = blur_out(side);
        }
        let mut pw_caches = Vec::new();
        for conv in &self.pointwise {
            let z = conv.forward(&act, n, side, side);
            let a: Vec<T> = z.iter().map(|&e| gelu(e)).collect();
            if keep {
                pw_caches.push((std::mem::replace(&mut act, a), z));
            } else {
                act = a;
            }
        }
        // channel-major → per-sample rows of (c, y, x)
        let hw = side * side;
        let ch = act.len() / (n * hw);
        let mut flat = vec![T::zero(); act.len()];
        for c in 0..ch {
            for s in 0..n {
                flat[(s * ch + c) * hw..(s * ch + c + 1) * hw].copy_from_slice(&act[(c * n + s) * hw..(c * n + s + 1) * hw]);
            }
        }
        let pre = self.dense.forward(&flat, n);
        let out: Vec<T> = pre.iter().map(|&e| gelu(e)).collect();
        let cache = keep.then(|| EncoderCache {
            n,
            stages: stage_caches,
            pointwise: pw_caches,
            side,
            flat,
            dense_pre: pre,
        });
        (out, cache, stats)
    }

    /// Accumulates parameter gradients for upstream gradient `dout`
    /// (`n × features`). Requires a train-mode cache.
    pub(crate) fn backward(&self, cache: &EncoderCache<T>, dout: &[T], grad: &mut Self) {
        let n = cache.n;
        let dpre: Vec<T> = dout
            .iter()
            .zip(&cache.dense_pre)
            .map(|(&d, &z)| d * gelu_grad(z))
            .collect();
        let dflat = self
            .dense
            .backward(&cache.flat, n, &dpre, &mut grad.dense, true)
            .expect("dx requested");
        let side = cache.side;
        let hw = side * side;
        let ch = dflat.len() / (n * hw);
        let mut d = vec![T::zero(); dflat.len()];
        for c in 0..ch {
            for s in 0..n {
                d[(c * n + s) * hw..(c * n + s + 1) * hw].copy_from_slice(&dflat[(s * ch + c) * hw..(s * ch + c + 1) * hw]);
            }
        }
        for (i, conv) in self.pointwise.iter().enumerate().rev() {
            let (x, z) = &cache.pointwise[i];
            let dz: Vec<T> = d.iter().zip(z).map(|(&g, &z)| g * gelu_grad(z)).collect();
            d = conv
                .backward(x, n, side, side, &dz, &mut grad.pointwise[i], true)
                .expect("dx requested");
        }
        for (i, stage) in self.stages.iter().enumerate().rev() {
            let sc = &cache.stages[i];
            let ch = stage.conv.out_ch;
            let mut dv = blur_down_backward(&d, ch * n, sc.h, sc.w);
            let per = n * sc.h * sc.w;
            for c in 0..ch {
                let (g, b) = (stage.bn.gamma[c], stage.bn.beta[c]);
                for (dv, &xh) in dv[c * per..(c + 1) * per]
                    .iter_mut()
                    .zip(&sc.bn.xhat[c * per..(c + 1) * per])
                {
                    *dv *= gelu_grad(g * xh + b);
                }
            }
            let grad_stage = &mut grad.stages[i];
            let dz = stage.bn.backward(&sc.bn, &dv, per, &mut grad_stage.bn);
            match stage.conv.backward(&sc.x, n, sc.h, sc.w, &dz, &mut grad_stage.conv, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }

    pub(crate) fn apply_stats(&mut self, stats: &[BnBatchStats], momentum: f64) {
        for (stage, st) in self.stages.iter_mut().zip(stats) {
            stage.bn.apply_stats(st, momentum);
        }
    }
}
