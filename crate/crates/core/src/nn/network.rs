use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{Encoder, EncoderCache, EncoderShape};
use super::layers::{gelu, gelu_grad, sigmoid, BnBatchStats, Dense, BN_MOMENTUM};
use super::real::Real;
use crate::sampler::{ModelConfig, PAST_OFFSETS};
use crate::{Error, Result, FRAME_SIZE, NUM_ACTIONS};

/// Frames per state stack (t−1, t).
pub const STATE_FRAMES: usize = 2;

/// Layer sizes of the encoders and the past branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub input_size: usize,
    /// Parameter-free blur-pool downsamplings before the first stage.
    pub stem: usize,
    pub stage_channels: Vec<usize>,
    pub kernel: usize,
    pub pointwise_channels: Vec<usize>,
    pub features: usize,
    pub past_hidden: usize,
}

impl Topology {
    /// Full-size network: 32/64/64 channels, 5×5 kernels, 1×1 convs to 32 and 16.
    pub fn standard() -> Self {
        Self {
            input_size: FRAME_SIZE,
            stem: 0,
            stage_channels: vec![32, 64, 64],
            kernel: 5,
            pointwise_channels: vec![32, 16],
            features: 48,
            past_hidden: 96,
        }
    }

    /// Narrow network on a 4× pre-downsampled input (21 × 21), for
    /// CPU-bound studies.
    pub fn compact() -> Self {
        Self {
            input_size: FRAME_SIZE,
            stem: 2,
            stage_channels: vec![8, 8, 16],
            kernel: 3,
            pointwise_channels: vec![8, 8],
            features: 48,
            past_hidden: 96,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("topology: {m}")));
        if self.input_size == 0 || self.features == 0 || self.past_hidden == 0 {
            return bad("sizes must be positive");
        }
        if self.kernel % 2 == 0 {
            return bad("kernel must be odd");
        }
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) || self.pointwise_channels.contains(&0) {
            return bad("channel counts must be positive");
        }
        Ok(())
    }

    fn shape(&self, in_ch: usize) -> EncoderShape<'_> {
        EncoderShape {
            in_ch,
            input_size: self.input_size,
            stem: self.stem,
            stages: &self.stage_channels,
            kernel: self.kernel,
            pointwise: &self.pointwise_channels,
            features: self.features,
        }
    }
}

impl Default for Topology {
    fn default() -> Self {
        Self::standard()
    }
}

/// Past-state compression and gate.
#[derive(Debug, Clone, PartialEq)]
pub struct PastBranch<T> {
    pub compress_hidden: Dense<T>,
    pub compress_out: Dense<T>,
    pub gate: Dense<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization.
    Train,
    /// Running statistics in normalization.
    Eval,
}

/// Inputs of one state for a batch: frames `n × 2 × S × S`, gaze maps
/// `n × 4 × S × S`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateInputs<T> {
    pub frames: Vec<T>,
    pub gaze: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inputs<T> {
    pub n: usize,
    pub current: StateInputs<T>,
    /// One entry per past offset when the config uses past states.
    pub past: Vec<StateInputs<T>>,
}

/// Row-major network outputs for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub n: usize,
    pub logits: Vec<T>,
    pub probabilities: Vec<T>,
    pub gate_values: Option<Vec<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn logits_row(&self, i: usize) -> &[T] {
        &self.logits[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]
    }

    pub fn probabilities_row(&self, i: usize) -> &[T] {
        &self.probabilities[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS]
    }

    /// Index of the largest logit, lowest index on ties.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.logits_row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = j;
            }
        }
        best
    }
}

/// Batch-norm statistics gathered by one train-mode forward pass, one entry
/// per encoder invocation in call order.
#[derive(Debug, Clone, Default)]
pub struct RunningStatUpdate {
    pub image: Vec<Vec<BnBatchStats>>,
    pub gaze: Vec<Vec<BnBatchStats>>,
}

/// The action-prediction network for one model configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: ModelConfig,
    pub topology: Topology,
    pub seed: u64,
    pub image: Encoder<T>,
    pub gaze: Option<Encoder<T>>,
    pub past: Option<PastBranch<T>>,
    pub classifier: Dense<T>,
}

macro_rules! encoder_tensors {
    ($out:ident, $prefix:expr, $enc:expr, $iter:ident, $($r:tt)+) => {
        for (i, s) in $enc.stages.$iter().enumerate() {
            $out.push((format!("{}.stage{i}.conv.weight", $prefix), $($r)+ s.conv.weight, true));
            $out.push((format!("{}.stage{i}.bn.gamma", $prefix), $($r)+ s.bn.gamma, false));
            $out.push((format!("{}.stage{i}.bn.beta", $prefix), $($r)+ s.bn.beta, false));
        }
        for (i, c) in $enc.pointwise.$iter().enumerate() {
            $out.push((format!("{}.pointwise{i}.weight", $prefix), $($r)+ c.weight, true));
            if let Some(b) = $($r)+ c.bias {
                $out.push((format!("{}.pointwise{i}.bias", $prefix), b, false));
            }
        }
        $out.push((format!("{}.dense.weight", $prefix), $($r)+ $enc.dense.weight, true));
        $out.push((format!("{}.dense.bias", $prefix), $($r)+ $enc.dense.bias, false));
    };
}

macro_rules! dense_tensors {
    ($out:ident, $prefix:expr, $d:expr, $($r:tt)+) => {
        $out.push((format!("{}.weight", $prefix), $($r)+ $d.weight, true));
        $out.push((format!("{}.bias", $prefix), $($r)+ $d.bias, false));
    };
}

macro_rules! network_tensors {
    ($net:expr, $iter:ident, $($r:tt)+) => {{
        let mut out = Vec::new();
        encoder_tensors!(out, "image", $net.image, $iter, $($r)+);
        if let Some(g) = $($r)+ $net.gaze {
            encoder_tensors!(out, "gaze", g, $iter, $($r)+);
        }
        if let Some(p) = $($r)+ $net.past {
            dense_tensors!(out, "past.compress_hidden", p.compress_hidden, $($r)+);
            dense_tensors!(out, "past.compress_out", p.compress_out, $($r)+);
            dense_tensors!(out, "past.gate", p.gate, $($r)+);
        }
        dense_tensors!(out, "classifier", $net.classifier, $($r)+);
        out
    }};
}

macro_rules! network_buffers {
    ($net:expr, $iter:ident, $($r:tt)+) => {{
        let mut out = Vec::new();
        for (i, s) in $net.image.stages.$iter().enumerate() {
            out.push((format!("image.stage{i}.bn.running_mean"), $($r)+ s.bn.running_mean));
            out.push((format!("image.stage{i}.bn.running_var"), $($r)+ s.bn.running_var));
        }
        if let Some(g) = $($r)+ $net.gaze {
            for (i, s) in g.stages.$iter().enumerate() {
                out.push((format!("gaze.stage{i}.bn.running_mean"), $($r)+ s.bn.running_mean));
                out.push((format!("gaze.stage{i}.bn.running_var"), $($r)+ s.bn.running_var));
            }
        }
        out
    }};
}

/// Named tensor views in a fixed order; the flag marks weight decay.
pub type TensorList<'a, T> = Vec<(String, &'a Vec<T>, bool)>;

/// Everything kept from a train-mode forward pass for backpropagation.
struct NetCache<T> {
    image: Vec<EncoderCache<T>>,
    gaze: Vec<EncoderCache<T>>,
    /// Fused current features `n × F`.
    current: Vec<T>,
    past: Option<PastCache<T>>,
}

struct PastCache<T> {
    concat: Vec<T>,
    hidden_pre: Vec<T>,
    hidden: Vec<T>,
    p: Vec<T>,
    gate_in: Vec<T>,
    g: Vec<T>,
}

/// Cross-entropy from logits: mean of `logsumexp(row) − row[a]`.
pub fn loss<T: Real>(trace: &ForwardTrace<T>, actions: &[u8]) -> f64 {
    assert_eq!(actions.len(), trace.n, "one action per sample");
    assert!(trace.n > 0, "empty batch");
    let mut total = 0.0f64;
    for (i, &a) in actions.iter().enumerate() {
        let row = trace.logits_row(i);
        let m = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v.f64() - m).exp()).sum::<f64>().ln();
        total += lse - row[a as usize].f64();
    }
    total / trace.n as f64
}

/// Row-wise softmax of `n × NUM_ACTIONS` logits.
pub fn softmax_rows<T: Real>(logits: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    for (row, dst) in logits.chunks_exact(NUM_ACTIONS).zip(out.chunks_exact_mut(NUM_ACTIONS)) {
        let m = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v.f64() - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (d, v) in dst.iter_mut().zip(e) {
            *d = T::c(v / s);
        }
    }
    out
}

/// Deterministic parameters for `(config, topology, seed)`.
///
/// Draw order is image encoder, gaze encoder, past branch, classifier, so
/// configurations that share a branch also share its initial weights.
pub fn init_network<T: Real>(config: ModelConfig, topology: &Topology, seed: u64) -> Result<Network<T>> {
    topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Encoder::init(&mut rng, topology.shape(STATE_FRAMES));
    let gaze = config
        .gaze()
        .then(|| Encoder::init(&mut rng, topology.shape(crate::gazemaps::GAZE_CHANNELS)));
    let f = topology.features;
    let past = config.past().then(|| PastBranch {
        compress_hidden: Dense::init(&mut rng, PAST_OFFSETS.len() * f, topology.past_hidden),
        compress_out: Dense::init(&mut rng, topology.past_hidden, f),
        gate: Dense::init(&mut rng, 2 * f, f),
    });
    let classifier = Dense::init(&mut rng, f, NUM_ACTIONS);
    Ok(Network {
        config,
        topology: topology.clone(),
        seed,
        image,
        gaze,
        past,
        classifier,
    })
}

impl<T: Real> Network<T> {
    pub fn features(&self) -> usize {
        self.topology.features
    }

    /// Trainable tensors in canonical order with names and decay flags.
    pub fn params(&self) -> TensorList<'_, T> {
        network_tensors!(self, iter, &)
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Vec<T>, bool)> {
        network_tensors!(self, iter_mut, &mut)
    }

    /// Batch-norm running statistics.
    pub fn buffers(&self) -> Vec<(String, &Vec<T>)> {
        network_buffers!(self, iter, &)
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        network_buffers!(self, iter_mut, &mut)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// Same structure with every parameter and buffer set to zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t, _) in z.params_mut() {
            t.fill(T::zero());
        }
        for (_, t) in z.buffers_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut out: Network<U> = init_network(self.config, &self.topology, self.seed).expect("validated topology");
        for ((_, dst, _), (_, src, _)) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d = U::c(s.f64());
            }
        }
        for ((_, dst), (_, src)) in out.buffers_mut().into_iter().zip(self.buffers()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d = U::c(s.f64());
            }
        }
        out
    }

    fn check_inputs(&self, inputs: &Inputs<T>) -> Result<()> {
        let side = self.topology.input_size;
        let plane = side * side;
        let n = inputs.n;
        let check_state = |s: &StateInputs<T>, what: &str| -> Result<()> {
            if s.frames.len() != n * STATE_FRAMES * plane {
                return Err(Error::ShapeMismatch(format!(
                    "{what} frames: expected {} values, got {}",
                    n * STATE_FRAMES * plane,
                    s.frames.len()
                )));
            }
            match (&s.gaze, self.gaze.is_some()) {
                (Some(g), true) if g.len() == n * crate::gazemaps::GAZE_CHANNELS * plane => Ok(()),
                (Some(g), true) => Err(Error::ShapeMismatch(format!(
                    "{what} gaze: expected {} values, got {}",
                    n * crate::gazemaps::GAZE_CHANNELS * plane,
                    g.len()
                ))),
                (None, false) => Ok(()),
                (None, true) => Err(Error::ShapeMismatch(format!("{what}: gaze maps required"))),
                (Some(_), false) => Err(Error::ShapeMismatch(format!("{what}: unexpected gaze maps"))),
            }
        };
        if n == 0 {
            return Err(Error::ShapeMismatch("empty batch".into()));
        }
        check_state(&inputs.current, "current")?;
        if inputs.past.len() != self.n_past() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} past states, got {}",
                self.n_past(),
                inputs.past.len()
            )));
        }
        for (k, s) in inputs.past.iter().enumerate() {
            check_state(s, &format!("past[{k}]"))?;
        }
        Ok(())
    }

    pub fn n_past(&self) -> usize {
        if self.past.is_some() {
            PAST_OFFSETS.len()
        } else {
            0
        }
    }

    /// Encodes one state, averaging image and gaze features when gaze is used.
    fn encode_state(
        &self,
        s: &StateInputs<T>,
        n: usize,
        mode: Mode,
        keep: bool,
        caches: &mut (Vec<EncoderCache<T>>, Vec<EncoderCache<T>>),
        stats: &mut RunningStatUpdate,
    ) -> Vec<T> {
        let (mut c, ic, ist) = self.image.forward(&s.frames, n, mode, keep);
        caches.0.extend(ic);
        if mode == Mode::Train {
            stats.image.push(ist);
        }
        if let (Some(enc), Some(g)) = (&self.gaze, &s.gaze) {
            let (gf, gc, gst) = enc.forward(g, n, mode, keep);
            caches.1.extend(gc);
            if mode == Mode::Train {
                stats.gaze.push(gst);
            }
            let half = T::c(0.5);
            for (a, b) in c.iter_mut().zip(gf) {
                *a = (*a + b) * half;
            }
        }
        c
    }

    fn forward_impl(&self, inputs: &Inputs<T>, mode: Mode, keep: bool) -> Result<(ForwardTrace<T>, Option<NetCache<T>>, RunningStatUpdate)> {
        self.check_inputs(inputs)?;
        let n = inputs.n;
        let f = self.features();
        let mut caches = (Vec::new(), Vec::new());
        let mut stats = RunningStatUpdate::default();
        let current = self.encode_state(&inputs.current, n, mode, keep, &mut caches, &mut stats);
        let mut fused = current.clone();
        let mut past_cache = None;
        let mut gate_values = None;
        if let Some(pb) = &self.past {
            let k = inputs.past.len();
            let mut concat = vec![T::zero(); n * k * f];
            for (j, s) in inputs.past.iter().enumerate() {
                let e = self.encode_state(s, n, mode, keep, &mut caches, &mut stats);
                for i in 0..n {
                    concat[(i * k + j) * f..(i * k + j + 1) * f].copy_from_slice(&e[i * f..(i + 1) * f]);
                }
            }
            let hidden_pre = pb.compress_hidden.forward(&concat, n);
            let hidden: Vec<T> = hidden_pre.iter().map(|&v| gelu(v)).collect();
            let p = pb.compress_out.forward(&hidden, n);
            let mut gate_in = vec![T::zero(); n * 2 * f];
            for i in 0..n {
                gate_in[i * 2 * f..i * 2 * f + f].copy_from_slice(&current[i * f..(i + 1) * f]);
                gate_in[i * 2 * f + f..(i + 1) * 2 * f].copy_from_slice(&p[i * f..(i + 1) * f]);
            }
            let g: Vec<T> = pb.gate.forward(&gate_in, n).into_iter().map(sigmoid).collect();
            for ((o, &gv), &pv) in fused.iter_mut().zip(&g).zip(&p) {
                *o += gv * pv;
            }
            gate_values = Some(g.clone());
            if keep {
                past_cache = Some(PastCache {
                    concat,
                    hidden_pre,
                    hidden,
                    p,
                    gate_in,
                    g,
                });
            }
        }
        let logits = self.classifier.forward(&fused, n);
        let probabilities = softmax_rows(&logits);
        let trace = ForwardTrace {
            n,
            logits,
            probabilities,
            gate_values,
        };
        let cache = keep.then(|| NetCache {
            image: caches.0,
            gaze: caches.1,
            current: fused,
            past: past_cache,
        });
        Ok((trace, cache, stats))
    }

    /// Forward pass. In train mode normalization uses batch statistics; the
    /// running statistics are left untouched.
    pub fn forward(&self, inputs: &Inputs<T>, mode: Mode) -> Result<ForwardTrace<T>> {
        Ok(self.forward_impl(inputs, mode, false)?.0)
    }

    /// Batch statistics of a train-mode forward pass, without gradients.
    pub fn batch_statistics(&self, inputs: &Inputs<T>) -> Result<RunningStatUpdate> {
        Ok(self.forward_impl(inputs, Mode::Train, false)?.2)
    }

    /// Train-mode loss, exact parameter gradients and the batch statistics
    /// to fold into running averages.
    pub fn gradients(&self, inputs: &Inputs<T>, actions: &[u8]) -> Result<(f64, Network<T>, RunningStatUpdate)> {
        if actions.len() != inputs.n {
            return Err(Error::ShapeMismatch(format!("{} actions for {} samples", actions.len(), inputs.n)));
        }
        if let Some(&a) = actions.iter().find(|&&a| a as usize >= NUM_ACTIONS) {
            return Err(Error::ShapeMismatch(format!("action {a} out of range")));
        }
        let (trace, cache, stats) = self.forward_impl(inputs, Mode::Train, true)?;
        let cache = cache.expect("cache requested");
        let value = loss(&trace, actions);
        let n = inputs.n;
        let f = self.features();
        let mut grad = self.zeros_like();

        let inv_n = T::c(1.0 / n as f64);
        let mut dlogits = trace.probabilities.clone();
        for (i, &a) in actions.iter().enumerate() {
            dlogits[i * NUM_ACTIONS + a as usize] -= T::one();
        }
        dlogits.iter_mut().for_each(|v| *v *= inv_n);
        let dfused = self
            .classifier
            .backward(&cache.current, n, &dlogits, &mut grad.classifier, true)
            .expect("dx requested");

        let mut dcurrent = dfused.clone();
        let mut dpast_states: Vec<Vec<T>> = Vec::new();
        if let (Some(pb), Some(pc)) = (&self.past, &cache.past) {
            let gb = grad.past.as_mut().expect("past grads");
            let mut dp: Vec<T> = dfused.iter().zip(&pc.g).map(|(&d, &g)| d * g).collect();
            let dgate_pre: Vec<T> = dfused
                .iter()
                .zip(&pc.p)
                .zip(&pc.g)
                .map(|((&d, &p), &g)| d * p * g * (T::one() - g))
                .collect();
            let dgate_in = pb.gate.backward(&pc.gate_in, n, &dgate_pre, &mut gb.gate, true).expect("dx requested");
            for i in 0..n {
                for j in 0..f {
                    dcurrent[i * f + j] += dgate_in[i * 2 * f + j];
                    dp[i * f + j] += dgate_in[i * 2 * f + f + j];
                }
            }
            let dhidden = pb
                .compress_out
                .backward(&pc.hidden, n, &dp, &mut gb.compress_out, true)
                .expect("dx requested");
            let dhidden_pre: Vec<T> = dhidden.iter().zip(&pc.hidden_pre).map(|(&d, &z)| d * gelu_grad(z)).collect();
            let dconcat = pb
                .compress_hidden
                .backward(&pc.concat, n, &dhidden_pre, &mut gb.compress_hidden, true)
                .expect("dx requested");
            let k = self.n_past();
            for j in 0..k {
                let mut d = vec![T::zero(); n * f];
                for i in 0..n {
                    d[i * f..(i + 1) * f].copy_from_slice(&dconcat[(i * k + j) * f..(i * k + j + 1) * f]);
                }
                dpast_states.push(d);
            }
        }

        let mut state_grads = vec![dcurrent];
        state_grads.extend(dpast_states);
        let half = T::c(0.5);
        for (s, mut d) in state_grads.into_iter().enumerate() {
            if let Some(genc) = &self.gaze {
                d.iter_mut().for_each(|v| *v *= half);
                genc.backward(&cache.gaze[s], &d, grad.gaze.as_mut().expect("gaze grads"));
            }
            self.image.backward(&cache.image[s], &d, &mut grad.image);
        }
        Ok((value, grad, stats))
    }

    /// Folds train-mode batch statistics into the running averages, in the
    /// order the encoders were invoked.
    pub fn apply_running_stats(&mut self, update: &RunningStatUpdate) {
        for st in &update.image {
            self.image.apply_stats(st, BN_MOMENTUM);
        }
        if let Some(g) = &mut self.gaze {
            for st in &update.gaze {
                g.apply_stats(st, BN_MOMENTUM);
            }
        }
    }

    /// Folds `update` into an equal-weight average over every encoder call
    /// seen so far; `seen` counts image and gaze calls and starts at zero.
    pub fn average_running_stats(&mut self, update: &RunningStatUpdate, seen: &mut [usize; 2]) {
        for st in &update.image {
            seen[0] += 1;
            self.image.apply_stats(st, 1.0 / seen[0] as f64);
        }
        if let Some(g) = &mut self.gaze {
            for st in &update.gaze {
                seen[1] += 1;
                g.apply_stats(st, 1.0 / seen[1] as f64);
            }
        }
    }
}
