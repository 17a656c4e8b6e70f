use ablation_lab::nn::checkpoint::{load_checkpoint, save_checkpoint};
use ablation_lab::nn::*;
use ablation_lab::sampler::{ModelConfig, PAST_STATES};
use ablation_lab::NUM_ACTIONS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> Topology {
    Topology {
        input_size: 16,
        stem: 0,
        stage_channels: vec![3, 4, 4],
        kernel: 3,
        pointwise_channels: vec![4, 3],
        features: 12,
        past_hidden: 20,
    }
}

fn inputs(config: ModelConfig, n: usize, side: usize, seed: u64) -> Inputs<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = || StateInputs {
        frames: (0..n * 2 * side * side).map(|_| rng.random()).collect(),
        gaze: config.gaze().then(|| (0..n * 4 * side * side).map(|_| rng.random()).collect()),
    };
    let current = state();
    let past = if config.past() { (0..PAST_STATES).map(|_| state()).collect() } else { vec![] };
    Inputs { n, current, past }
}

fn trace_from_probabilities(rows: &[Vec<f64>]) -> ForwardTrace<f64> {
    let logits: Vec<f64> = rows.iter().flatten().map(|p| p.ln()).collect();
    ForwardTrace {
        n: rows.len(),
        probabilities: softmax_rows(&logits),
        logits,
        gate_values: None,
    }
}

/// Distribution giving `p` to action `a` and spreading the rest evenly.
fn row_with(a: usize, p: f64) -> Vec<f64> {
    (0..NUM_ACTIONS).map(|j| if j == a { p } else { (1.0 - p) / 17.0 }).collect()
}

#[test]
fn init_is_deterministic_and_branch_specific() {
    let topo = Topology::compact();
    let a: Network<f32> = init_network(ModelConfig::A, &topo, 3).unwrap();
    assert_eq!(a, init_network(ModelConfig::A, &topo, 3).unwrap());
    assert_ne!(a, init_network(ModelConfig::A, &topo, 4).unwrap());
    let d: Network<f32> = init_network(ModelConfig::D, &topo, 3).unwrap();
    assert!(d.gaze.is_none() && d.past.is_none());
    assert!(a.gaze.is_some() && a.past.is_some());
    assert!(a.param_count() > d.param_count());
    assert_eq!(a.classifier.out, 18);
    // biases start at zero, normalization at identity
    for (name, t, _) in a.params() {
        if name.ends_with("bias") || name.ends_with("beta") {
            assert!(t.iter().all(|&v| v == 0.0), "{name}");
        }
        if name.ends_with("gamma") {
            assert!(t.iter().all(|&v| v == 1.0), "{name}");
        }
    }
}

#[test]
fn full_size_batch_shapes() {
    let topo = Topology::compact();
    let net: Network<f32> = init_network(ModelConfig::D, &topo, 0).unwrap();
    let x = inputs(ModelConfig::D, 64, 84, 1);
    let t = net.forward(&x, Mode::Train).unwrap();
    assert_eq!((t.n, t.logits.len(), t.probabilities.len()), (64, 64 * 18, 64 * 18));
    assert!(t.gate_values.is_none());
    let wrong = inputs(ModelConfig::A, 4, 84, 1);
    assert!(matches!(net.forward(&wrong, Mode::Train), Err(ablation_lab::Error::ShapeMismatch(_))));
}

#[test]
fn probabilities_and_gates_are_well_formed() {
    let topo = small();
    for config in ModelConfig::ALL {
        let net: Network<f32> = init_network(config, &topo, 5).unwrap();
        let t = net.forward(&inputs(config, 6, 16, 2), Mode::Train).unwrap();
        for i in 0..t.n {
            let s: f64 = t.probabilities_row(i).iter().map(|&p| p as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        assert_eq!(t.gate_values.is_some(), config.past());
        if let Some(g) = t.gate_values {
            assert_eq!(g.len(), 6 * topo.features);
            assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn closed_gate_recovers_the_past_free_network() {
    let topo = small();
    for (with, without) in [(ModelConfig::A, ModelConfig::B), (ModelConfig::C, ModelConfig::D), (ModelConfig::E, ModelConfig::F)] {
        let mut net: Network<f32> = init_network(with, &topo, 8).unwrap();
        net.past.as_mut().unwrap().gate.bias.iter_mut().for_each(|b| *b = -100.0);
        let plain = Network {
            config: without,
            past: None,
            ..net.clone()
        };
        let x = inputs(with, 5, 16, 3);
        let x_plain = Inputs {
            past: vec![],
            ..x.clone()
        };
        for mode in [Mode::Train, Mode::Eval] {
            let a = net.forward(&x, mode).unwrap();
            let b = plain.forward(&x_plain, mode).unwrap();
            for (u, v) in a.logits.iter().zip(&b.logits) {
                assert!((u - v).abs() < 1e-5, "{with}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn loss_examples() {
    let uniform = trace_from_probabilities(&[vec![1.0 / 18.0; 18]]);
    assert!((loss(&uniform, &[7]) - 18f64.ln()).abs() < 1e-12);
    assert!((loss(&uniform, &[7]) - 2.8904).abs() < 1e-4);

    let certain = trace_from_probabilities(&[row_with(2, 1.0 - 1e-15)]);
    assert!(loss(&certain, &[2]) < 1e-12);

    let two = trace_from_probabilities(&[row_with(0, 0.5), row_with(5, 0.25)]);
    let want = (2f64.ln() + 4f64.ln()) / 2.0;
    assert!((loss(&two, &[0, 5]) - want).abs() < 1e-12);
    assert!((want - 1.0397).abs() < 1e-4);
}

#[test]
fn loss_is_stable_for_large_logits() {
    let mut logits = vec![0.0f32; 18];
    logits[3] = 1000.0;
    let t = ForwardTrace {
        n: 1,
        probabilities: softmax_rows(&logits),
        logits,
        gate_values: None,
    };
    assert_eq!(loss(&t, &[3]), 0.0);
    assert!((loss(&t, &[0]) - 1000.0).abs() < 1e-9);
}

#[test]
fn softmax_is_shift_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let row: Vec<f32> = (0..18).map(|_| rng.random_range(-10.0..10.0)).collect();
        let c: f32 = rng.random_range(-50.0..50.0);
        let shifted: Vec<f32> = row.iter().map(|v| v + c).collect();
        for (p, q) in softmax_rows(&row).iter().zip(softmax_rows(&shifted)) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}

/// Classifier-bias gradient as the batch mean of `p − onehot(a)`.
fn bias_gradient_oracle(trace: &ForwardTrace<f32>, actions: &[u8]) -> Vec<f64> {
    let mut g = vec![0.0; NUM_ACTIONS];
    for (i, &a) in actions.iter().enumerate() {
        for (j, p) in trace.probabilities_row(i).iter().enumerate() {
            g[j] += (*p as f64 - if j == a as usize { 1.0 } else { 0.0 }) / actions.len() as f64;
        }
    }
    g
}

#[test]
fn zero_classifier_gives_uniform_gradient() {
    let mut net: Network<f32> = init_network(ModelConfig::B, &small(), 1).unwrap();
    net.classifier.weight.iter_mut().for_each(|w| *w = 0.0);
    let x = inputs(ModelConfig::B, 4, 16, 4);
    let actions = [0u8, 3, 3, 17];
    let trace = net.forward(&x, Mode::Train).unwrap();
    assert!(trace.probabilities.iter().all(|&p| (p - 1.0 / 18.0).abs() < 1e-7));
    let (l, grads, _) = net.gradients(&x, &actions).unwrap();
    assert!((l - 18f64.ln()).abs() < 1e-6);
    let want = bias_gradient_oracle(&trace, &actions);
    for (g, w) in grads.classifier.bias.iter().zip(&want) {
        assert!((*g as f64 - w).abs() < 1e-6);
    }
    assert!((want[3] - (1.0 / 18.0 - 0.5)).abs() < 1e-7);
}

#[test]
fn duplicated_sample_doubles_its_share() {
    let topo = small();
    let net: Network<f32> = init_network(ModelConfig::D, &topo, 2).unwrap();
    let x = inputs(ModelConfig::D, 2, 16, 5);
    let plane = 2 * 16 * 16;
    let mut frames = x.current.frames[..plane].to_vec();
    frames.extend_from_slice(&x.current.frames);
    let dup = Inputs {
        n: 3,
        current: StateInputs { frames, gaze: None },
        past: vec![],
    };
    let actions = [4u8, 4, 9];
    let trace = net.forward(&dup, Mode::Train).unwrap();
    assert_eq!(trace.probabilities_row(0), trace.probabilities_row(1));
    let (_, grads, _) = net.gradients(&dup, &actions).unwrap();
    // (2·r₀ + r₂) / 3 where r is the per-sample p − onehot
    let p0 = trace.probabilities_row(0);
    let p2 = trace.probabilities_row(2);
    for j in 0..NUM_ACTIONS {
        let r0 = p0[j] as f64 - (j == 4) as u8 as f64;
        let r2 = p2[j] as f64 - (j == 9) as u8 as f64;
        assert!((grads.classifier.bias[j] as f64 - (2.0 * r0 + r2) / 3.0).abs() < 1e-6);
    }
}

#[test]
fn eval_forward_is_bit_reproducible() {
    let topo = small();
    for config in ModelConfig::ALL {
        let net: Network<f32> = init_network(config, &topo, 9).unwrap();
        let x = inputs(config, 3, 16, 6);
        let a = net.forward(&x, Mode::Eval).unwrap();
        let b = net.forward(&x, Mode::Eval).unwrap();
        assert!(a.logits.iter().zip(&b.logits).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn eval_rows_do_not_depend_on_batch_mates() {
    let topo = small();
    let net: Network<f32> = init_network(ModelConfig::A, &topo, 9).unwrap();
    let x = inputs(ModelConfig::A, 4, 16, 7);
    let full = net.forward(&x, Mode::Eval).unwrap();
    let first = |s: &StateInputs<f32>| StateInputs {
        frames: s.frames[..2 * 256].to_vec(),
        gaze: s.gaze.as_ref().map(|g| g[..4 * 256].to_vec()),
    };
    let one = Inputs {
        n: 1,
        current: first(&x.current),
        past: x.past.iter().map(first).collect(),
    };
    let single = net.forward(&one, Mode::Eval).unwrap();
    for (u, v) in single.logits.iter().zip(full.logits_row(0)) {
        assert!((u - v).abs() < 1e-5);
    }
}

#[test]
fn gaze_input_reaches_logits_only_with_gaze() {
    let topo = small();
    let net: Network<f32> = init_network(ModelConfig::F, &topo, 10).unwrap();
    let x = inputs(ModelConfig::F, 2, 16, 8);
    let mut zeroed = x.clone();
    zeroed.current.gaze.as_mut().unwrap().iter_mut().for_each(|v| *v = 0.0);
    let a = net.forward(&x, Mode::Eval).unwrap();
    let b = net.forward(&zeroed, Mode::Eval).unwrap();
    assert_ne!(a.logits, b.logits);
    // the image branch alone is unaffected: D with the shared weights sees no gaze
    let d = Network {
        config: ModelConfig::D,
        gaze: None,
        ..net.clone()
    };
    let xd = Inputs {
        current: StateInputs { gaze: None, ..x.current.clone() },
        ..x.clone()
    };
    let zd = Inputs {
        current: StateInputs { gaze: None, ..zeroed.current.clone() },
        ..zeroed
    };
    assert_eq!(d.forward(&xd, Mode::Eval).unwrap().logits, d.forward(&zd, Mode::Eval).unwrap().logits);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let net: Network<f32> = init_network(ModelConfig::A, &small(), 12).unwrap();
    let manifest = save_checkpoint(&net, 42, dir.path(), "model_A").unwrap();
    let (back, m2) = load_checkpoint(dir.path(), "model_A").unwrap();
    assert_eq!(back, net);
    assert_eq!(m2, manifest);
    assert_eq!(m2.step, 42);
}
