use ablation_lab::ingest::*;
use ablation_lab::nn::{init_network, softmax_rows, Network, Topology};
use ablation_lab::sampler::{ModelConfig, SamplerContext};
use ablation_lab::synth::{generate_recording, SyntheticPolicyKind};
use ablation_lab::training::*;
use ablation_lab::{FRAME_PIXELS, NUM_ACTIONS};

const PPD: f64 = DEFAULT_PIXELS_PER_DEGREE;

fn focus_store(length: usize) -> ReplayStore {
    let rec = generate_recording(SyntheticPolicyKind::Focus, 1, length, 4, 21).unwrap();
    build_replay(&rec.frame_source(), &[rec.session()], "toy", None, PPD).unwrap()
}

fn toy_schedule() -> TrainSchedule {
    TrainSchedule {
        quasi_epochs: 5,
        batches_per_epoch: 20,
        bn_refresh_batches: 2,
        seed: 4,
        ..Default::default()
    }
}

/// Store whose actions are given, one state per action, all frames blank.
fn store_with_actions(actions: &[u8]) -> ReplayStore {
    let mut cols = StoreColumns::default();
    for (t, &a) in actions.iter().enumerate() {
        cols.frames.extend(std::iter::repeat_n(0, FRAME_PIXELS));
        cols.actions.push(a);
        cols.rewards.push(0.0);
        cols.terminal.push(t + 1 == actions.len());
        cols.episode_ids.push(0);
        cols.session_ids.push(0);
        cols.gaze.push(vec![[42.0, 42.0]]);
    }
    let geometry = SourceGeometry {
        width: 84,
        height: 84,
        pixels_per_degree: PPD,
    };
    ReplayStore::from_columns("acts", None, geometry, vec![], cols).unwrap()
}

fn all_val(n: usize) -> SplitAssignment {
    SplitAssignment {
        block_size: 50,
        val_fraction: 0.1,
        seed: 0,
        labels: vec![SplitLabel::Val; n],
    }
}

/// A network whose logits are the classifier bias.
fn constant_network(config: ModelConfig, bias: &[f32]) -> Network<f32> {
    let mut net: Network<f32> = init_network(config, &Topology::compact(), 0).unwrap();
    net.classifier.weight.iter_mut().for_each(|w| *w = 0.0);
    net.classifier.bias.copy_from_slice(bias);
    net
}

#[test]
fn toy_training_reduces_loss_and_is_reproducible() {
    let store = focus_store(200);
    let split = block_split(&store, 50, 0.1, 0).unwrap();
    let mean = compute_mean_frame(&store, &split).unwrap();
    let ctx = SamplerContext::new(&store, mean, PPD).unwrap();
    let topo = Topology::compact();
    let sched = toy_schedule();
    let m = train(&ctx, &split, ModelConfig::D, &topo, &sched).unwrap();
    assert_eq!(m.history.len(), 5);
    assert_eq!(m.steps, 100);
    assert!(m.history[4].train_loss < m.history[0].train_loss, "{:?}", m.history);
    assert_eq!(m.split_fingerprint, split.fingerprint());

    let again = train(&ctx, &split, ModelConfig::D, &topo, &sched).unwrap();
    assert_eq!(again.history, m.history);
    assert_eq!(again.network, m.network);
}

#[test]
fn clipping_scales_to_the_limit() {
    let net: Network<f32> = init_network(ModelConfig::D, &Topology::compact(), 0).unwrap();
    let mut g = net.zeros_like();
    g.classifier.bias[0] = 6.0;
    g.classifier.bias[1] = 8.0;
    assert!((global_norm(&g) - 10.0).abs() < 1e-9);
    let before = clip_global_norm(&mut g, 1.0);
    assert!((before - 10.0).abs() < 1e-9);
    assert!((g.classifier.bias[0] - 0.6).abs() < 1e-7 && (g.classifier.bias[1] - 0.8).abs() < 1e-7);
    // below the limit nothing changes
    let mut small = net.zeros_like();
    small.classifier.bias[0] = 0.5;
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small.classifier.bias[0], 0.5);
}

#[test]
fn learning_rate_drops_after_epoch_100() {
    let s = TrainSchedule::default();
    assert_eq!(s.learning_rate(1), 1e-3);
    assert_eq!(s.learning_rate(100), 1e-3);
    assert_eq!(s.learning_rate(101), 1e-4);
    assert_eq!(s.learning_rate(150), 1e-4);
    assert_eq!(s.total_steps(), 30_000);
}

#[test]
fn decay_is_decoupled() {
    let mut net: Network<f32> = init_network(ModelConfig::A, &Topology::compact(), 1).unwrap();
    // give biases and normalization parameters non-default values
    for (_, t, _) in net.params_mut() {
        t.iter_mut().for_each(|v| *v += 0.25);
    }
    let before = net.clone();
    let zero = net.zeros_like();
    let sched = TrainSchedule::default();
    let mut opt = AdamW::new(&net, &sched);
    let lr = 1e-3;
    opt.step(&mut net, &zero, lr);
    for ((name, old, decay), (_, new, _)) in before.params().into_iter().zip(net.params()) {
        for (o, n) in old.iter().zip(new.iter()) {
            let want = if decay { o - (lr * 1e-2) as f32 * o } else { *o };
            assert_eq!(n.to_bits(), want.to_bits(), "{name}");
        }
    }
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let mut net: Network<f32> = init_network(ModelConfig::D, &Topology::compact(), 1).unwrap();
    let sched = TrainSchedule {
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut g = net.zeros_like();
    g.classifier.bias[2] = 3.0;
    g.classifier.bias[5] = -0.01;
    let mut opt = AdamW::new(&net, &sched);
    opt.step(&mut net, &g, 1e-3);
    assert!((net.classifier.bias[2] + 1e-3).abs() < 1e-8);
    assert!((net.classifier.bias[5] - 1e-3).abs() < 1e-8);
    assert_eq!(net.classifier.bias[0], 0.0);
}

#[test]
fn accuracy_counts_exact_matches() {
    // the constant network always predicts action 0
    let mut bias = vec![0.0; NUM_ACTIONS];
    bias[0] = 1.0;
    let net = constant_network(ModelConfig::D, &bias);
    let store = store_with_actions(&[0, 0, 0, 1]);
    let split = all_val(4);
    let ctx = SamplerContext::new(&store, vec![0.0; FRAME_PIXELS], PPD).unwrap();
    assert_eq!(evaluate_accuracy(&net, &ctx, &split, SplitLabel::Val).unwrap(), 0.75);

    let store = store_with_actions(&[0; 7]);
    let ctx = SamplerContext::new(&store, vec![0.0; FRAME_PIXELS], PPD).unwrap();
    assert_eq!(evaluate_accuracy(&net, &ctx, &all_val(7), SplitLabel::Val).unwrap(), 1.0);

    // FIRE (1) predicted against UP+FIRE (10) is a miss
    let mut bias = vec![0.0; NUM_ACTIONS];
    bias[1] = 1.0;
    let net = constant_network(ModelConfig::D, &bias);
    let store = store_with_actions(&[10, 10]);
    let ctx = SamplerContext::new(&store, vec![0.0; FRAME_PIXELS], PPD).unwrap();
    assert_eq!(evaluate_accuracy(&net, &ctx, &all_val(2), SplitLabel::Val).unwrap(), 0.0);
}

#[test]
fn ties_resolve_to_the_lowest_action() {
    let net = constant_network(ModelConfig::F, &[0.0; NUM_ACTIONS]);
    let store = store_with_actions(&[0, 3, 0, 17]);
    let ctx = SamplerContext::new(&store, vec![0.0; FRAME_PIXELS], PPD).unwrap();
    assert_eq!(evaluate_accuracy(&net, &ctx, &all_val(4), SplitLabel::Val).unwrap(), 0.5);
    let p = predict_true_action_probabilities(&net, &ctx, &[0, 1, 2, 3]).unwrap();
    assert!(p.iter().all(|&v| (v - 1.0 / 18.0).abs() < 1e-7));
}

#[test]
fn probabilities_agree_with_dumped_logits() {
    let store = focus_store(150);
    let split = block_split(&store, 50, 0.1, 0).unwrap();
    let mean = compute_mean_frame(&store, &split).unwrap();
    let ctx = SamplerContext::new(&store, mean, PPD).unwrap();
    let net: Network<f32> = init_network(ModelConfig::A, &Topology::compact(), 6).unwrap();
    let idx: Vec<usize> = (45..150).step_by(7).collect();
    let logits = eval_logits(&net, &ctx, &idx).unwrap();
    let probs = predict_true_action_probabilities(&net, &ctx, &idx).unwrap();
    let dist = predict_distributions(&net, &ctx, &idx).unwrap();
    for (k, row) in logits.chunks_exact(NUM_ACTIONS).enumerate() {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
        let z: f64 = row.iter().map(|&v| (v as f64 - m).exp()).sum();
        let a = store.action(idx[k]) as usize;
        let want = (row[a] as f64 - m).exp() / z;
        assert!((probs[k] - want).abs() < 1e-6);
        assert!(probs[k] > 0.0 && probs[k] < 1.0);
        let s: f64 = dist[k * NUM_ACTIONS..(k + 1) * NUM_ACTIONS].iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
    assert_eq!(softmax_rows(&logits), dist);
}

#[test]
fn accuracy_does_not_depend_on_chunking() {
    let store = focus_store(400);
    let split = block_split(&store, 50, 0.3, 5).unwrap();
    let mean = compute_mean_frame(&store, &split).unwrap();
    let ctx = SamplerContext::new(&store, mean, PPD).unwrap();
    let net: Network<f32> = init_network(ModelConfig::B, &Topology::compact(), 2).unwrap();
    let idx = ctx.valid_indices(ModelConfig::B, Some((&split, SplitLabel::Val))).unwrap();
    assert!(idx.len() > 64);
    let whole = evaluate_accuracy(&net, &ctx, &split, SplitLabel::Val).unwrap();
    let hits = idx
        .iter()
        .filter(|&&i| {
            let row = eval_logits(&net, &ctx, &[i]).unwrap();
            argmax(&row) == store.action(i) as usize
        })
        .count();
    assert_eq!(whole, hits as f64 / idx.len() as f64);
}
