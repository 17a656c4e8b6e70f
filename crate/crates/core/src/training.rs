//! Optimization of one model under the quasi-epoch schedule, and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{SplitAssignment, SplitLabel};
use crate::nn::{init_network, softmax_rows, Inputs, Mode, Network, Topology};
use crate::sampler::{sample_indices, ModelConfig, SamplerContext, DEFAULT_BATCH_SIZE};
use crate::util::derive_seed;
use crate::{Error, Result, NUM_ACTIONS};

/// States per evaluation forward pass.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub quasi_epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_after_drop: f64,
    /// Last epoch (1-based) trained at `lr_initial`.
    pub lr_drop_epoch: usize,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Train batches used to re-estimate batch-norm running statistics with
    /// the weights reached at the end of each quasi-epoch; 0 keeps the
    /// momentum averages.
    #[serde(default = "default_bn_refresh")]
    pub bn_refresh_batches: usize,
}

fn default_bn_refresh() -> usize {
    DEFAULT_BN_REFRESH_BATCHES
}

pub const DEFAULT_BN_REFRESH_BATCHES: usize = 16;

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            quasi_epochs: 150,
            batches_per_epoch: 200,
            batch_size: DEFAULT_BATCH_SIZE,
            lr_initial: 1e-3,
            lr_after_drop: 1e-4,
            lr_drop_epoch: 100,
            weight_decay: 1e-2,
            grad_clip_norm: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            bn_refresh_batches: DEFAULT_BN_REFRESH_BATCHES,
        }
    }
}

impl TrainSchedule {
    /// Learning rate used throughout 1-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch > self.lr_drop_epoch {
            self.lr_after_drop
        } else {
            self.lr_initial
        }
    }

    pub fn total_steps(&self) -> usize {
        self.quasi_epochs * self.batches_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.quasi_epochs, self.batches_per_epoch, self.batch_size];
        let reals = [
            self.lr_initial,
            self.lr_after_drop,
            self.grad_clip_norm,
            self.eps,
        ];
        if counts.contains(&0) || reals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("schedule values must be positive".into()));
        }
        if !(self.weight_decay >= 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::InvalidArgument("schedule decay or moment rates out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    /// `None` when the split has no valid validation state.
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network<f32>,
    pub config: ModelConfig,
    pub history: Vec<EpochRecord>,
    pub split_fingerprint: String,
    pub schedule: TrainSchedule,
    pub game_id: String,
    pub subject_id: Option<String>,
    pub steps: u64,
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamW {
    pub fn new(net: &Network<f32>, schedule: &TrainSchedule) -> Self {
        let zeros: Vec<Vec<f32>> = net.params().iter().map(|(_, t, _)| vec![0.0; t.len()]).collect();
        Self {
            beta1: schedule.beta1,
            beta2: schedule.beta2,
            eps: schedule.eps,
            weight_decay: schedule.weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Tensors flagged as non-decaying skip the decay term.
    pub fn step(&mut self, net: &mut Network<f32>, grads: &Network<f32>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let step = (lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let eps = self.eps as f32;
        let shrink = (lr * self.weight_decay) as f32;
        for ((((_, theta, decay), (_, g, _)), m), v) in net
            .params_mut()
            .into_iter()
            .zip(grads.params())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..theta.len() {
                if decay {
                    theta[i] -= shrink * theta[i];
                }
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                theta[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
    }
}

pub fn global_norm(grads: &Network<f32>) -> f64 {
    grads
        .params()
        .iter()
        .flat_map(|(_, t, _)| t.iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Network<f32>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for (_, t, _) in grads.params_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// Seed of the initial parameters for a run.
pub fn init_seed(schedule: &TrainSchedule) -> u64 {
    schedule.seed
}

fn batch_stream(schedule: &TrainSchedule, config: ModelConfig) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(schedule.seed, 1 + config.index() as u64))
}

/// Replaces the running statistics by equal-weight averages over fresh
/// train batches under the current weights. The momentum averages trail
/// the weights by a few dozen steps, which eval mode notices while the
/// learning rate is high.
pub fn refresh_batch_statistics(
    net: &mut Network<f32>,
    ctx: &SamplerContext<'_>,
    train_idx: &[usize],
    schedule: &TrainSchedule,
    epoch: usize,
) -> Result<()> {
    let stream = derive_seed(schedule.seed, 100 + net.config.index() as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream, epoch as u64));
    let mut seen = [0; 2];
    for _ in 0..schedule.bn_refresh_batches {
        let idx = sample_indices(train_idx, schedule.batch_size, &mut rng)?;
        let (inputs, _) = ctx.assemble_batch(&idx, net.config)?;
        let update = net.batch_statistics(&inputs)?;
        net.average_running_stats(&update, &mut seen);
    }
    Ok(())
}

/// Trains `config` on the train part of `split`.
pub fn train(
    ctx: &SamplerContext<'_>,
    split: &SplitAssignment,
    config: ModelConfig,
    topology: &Topology,
    schedule: &TrainSchedule,
) -> Result<TrainedModel> {
    train_with_progress(ctx, split, config, topology, schedule, &mut |_| {})
}

pub fn train_with_progress(
    ctx: &SamplerContext<'_>,
    split: &SplitAssignment,
    config: ModelConfig,
    topology: &Topology,
    schedule: &TrainSchedule,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    schedule.validate()?;
    let store = ctx.store();
    let train_idx = ctx.valid_indices(config, Some((split, SplitLabel::Train)))?;
    if train_idx.is_empty() {
        return Err(Error::NoValidStates(format!(
            "config {config}: no valid train states"
        )));
    }
    let val_idx = ctx.valid_indices(config, Some((split, SplitLabel::Val)))?;
    let mut net: Network<f32> = init_network(config, topology, init_seed(schedule))?;
    let mut opt = AdamW::new(&net, schedule);
    let mut rng = batch_stream(schedule, config);
    let mut history = Vec::with_capacity(schedule.quasi_epochs);
    for epoch in 1..=schedule.quasi_epochs {
        let lr = schedule.learning_rate(epoch);
        let mut loss_sum = 0.0;
        for b in 0..schedule.batches_per_epoch {
            let idx = sample_indices(&train_idx, schedule.batch_size, &mut rng)?;
            let (inputs, actions) = ctx.assemble_batch(&idx, config)?;
            let (loss, mut grads, stats) = net.gradients(&inputs, &actions)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: opt.steps() as usize + 1,
                    detail: format!("config {config}, epoch {epoch}, batch {b}: loss {loss}"),
                });
            }
            clip_global_norm(&mut grads, schedule.grad_clip_norm);
            opt.step(&mut net, &grads, lr);
            net.apply_running_stats(&stats);
            loss_sum += loss;
        }
        refresh_batch_statistics(&mut net, ctx, &train_idx, schedule, epoch)?;
        let val_accuracy = if val_idx.is_empty() {
            None
        } else {
            Some(accuracy_on(&net, ctx, &val_idx)?)
        };
        let rec = EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / schedule.batches_per_epoch as f64,
            val_accuracy,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    let first = store.sessions.first().and_then(|s| s.subject_id.clone());
    let subject_id = first.filter(|f| store.sessions.iter().all(|s| s.subject_id.as_ref() == Some(f)));
    Ok(TrainedModel {
        network: net,
        config,
        history,
        split_fingerprint: split.fingerprint(),
        schedule: schedule.clone(),
        game_id: store.game_id.clone(),
        subject_id,
        steps: opt.steps(),
    })
}

/// Eval-mode logits for `indices`, `len × NUM_ACTIONS` row-major.
pub fn eval_logits(net: &Network<f32>, ctx: &SamplerContext<'_>, indices: &[usize]) -> Result<Vec<f32>> {
    if indices.is_empty() {
        return Err(Error::NoValidStates("nothing to evaluate".into()));
    }
    let mut out = Vec::with_capacity(indices.len() * NUM_ACTIONS);
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (inputs, _) = ctx.assemble_batch(chunk, net.config)?;
        out.extend(eval_inputs(net, &inputs)?);
    }
    Ok(out)
}

fn eval_inputs(net: &Network<f32>, inputs: &Inputs<f32>) -> Result<Vec<f32>> {
    Ok(net.forward(inputs, Mode::Eval)?.logits)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn accuracy_on(net: &Network<f32>, ctx: &SamplerContext<'_>, indices: &[usize]) -> Result<f64> {
    let logits = eval_logits(net, ctx, indices)?;
    let hits = logits
        .chunks_exact(NUM_ACTIONS)
        .zip(indices)
        .filter(|(row, &i)| argmax(row) == ctx.store().action(i) as usize)
        .count();
    Ok(hits as f64 / indices.len() as f64)
}

/// Exact-match accuracy over every valid state carrying `label`.
pub fn evaluate_accuracy(
    net: &Network<f32>,
    ctx: &SamplerContext<'_>,
    split: &SplitAssignment,
    label: SplitLabel,
) -> Result<f64> {
    let idx = ctx.valid_indices(net.config, Some((split, label)))?;
    if idx.is_empty() {
        return Err(Error::NoValidStates(format!(
            "config {}: no valid {} states",
            net.config,
            label.as_str()
        )));
    }
    accuracy_on(net, ctx, &idx)
}

/// Full eval-mode action distributions, `len × NUM_ACTIONS`.
pub fn predict_distributions(net: &Network<f32>, ctx: &SamplerContext<'_>, indices: &[usize]) -> Result<Vec<f32>> {
    Ok(softmax_rows(&eval_logits(net, ctx, indices)?))
}

/// Probability each state's demonstrated action receives, eval mode.
pub fn predict_true_action_probabilities(
    net: &Network<f32>,
    ctx: &SamplerContext<'_>,
    indices: &[usize],
) -> Result<Vec<f64>> {
    for &i in indices {
        ctx.check_window(i, net.config)?;
    }
    let probs = predict_distributions(net, ctx, indices)?;
    Ok(probs
        .chunks_exact(NUM_ACTIONS)
        .zip(indices)
        .map(|(row, &i)| row[ctx.store().action(i) as usize] as f64)
        .collect())
}
