//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_ONLY=1,5` to run a subset; the others print SKIP.
//! The process exits non-zero only when `ACCEPTANCE_STRICT` is set and some
//! criterion failed, so the report is always printed in full.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ablation_lab::ablation::{drop_matrix, normalized_drop, raw_difference, run_ablation, GameResult};
use ablation_lab::clustering::{
    conditional_affinities, joint_affinities, kmeans_fit, silhouette, KMeansParams, DEFAULT_K, DEFAULT_PERPLEXITY,
};
use ablation_lab::gazemaps::{
    build_gaze_stack, render_gaze_map, stack_sigmas_px, GazeMapCache, GAZE_CHANNELS, GAZE_SIGMAS_DEG,
};
use ablation_lab::ingest::{
    block_split, build_replay, common_choice_accuracy, compute_mean_frame, DEFAULT_BLOCK_SIZE,
    DEFAULT_PIXELS_PER_DEGREE, DEFAULT_VAL_FRACTION,
};
use ablation_lab::masking::{mask_periphery, FocusRegion};
use ablation_lab::nn::{init_network, loss, Inputs, Mode, Network, StateInputs, Topology};
use ablation_lab::sampler::{ModelConfig, SamplerContext, DEFAULT_BATCH_SIZE, PAST_STATES, PAST_STRIDE};
use ablation_lab::synth::{generate_recording, theoretical_accuracy, ExpectedAccuracy, SyntheticPolicyKind};
use ablation_lab::training::TrainSchedule;
use ablation_lab::{GazePoint, FRAME_PIXELS, FRAME_SIZE};
use ablation_lab_cli::config::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- gradients

fn toy_topology() -> Topology {
    Topology {
        input_size: 12,
        stem: 0,
        stage_channels: vec![2, 3, 3],
        kernel: 3,
        pointwise_channels: vec![3, 2],
        features: 8,
        past_hidden: 16,
    }
}

fn random_state<T: From<f32>>(rng: &mut ChaCha8Rng, n: usize, side: usize, gaze: bool) -> StateInputs<T> {
    let plane = side * side;
    let mut draw = |len: usize| (0..len).map(|_| T::from(rng.random_range(-1.0f32..1.0))).collect::<Vec<T>>();
    let frames = draw(n * 2 * plane);
    let gaze = gaze.then(|| draw(n * 4 * plane));
    StateInputs { frames, gaze }
}

fn random_inputs<T: From<f32>>(config: ModelConfig, n: usize, side: usize, seed: u64) -> Inputs<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let current = random_state(&mut rng, n, side, config.gaze());
    let past = if config.past() {
        (0..PAST_STATES).map(|_| random_state(&mut rng, n, side, config.gaze())).collect()
    } else {
        Vec::new()
    };
    Inputs { n, current, past }
}

fn gradient_check() -> Check {
    let start = Instant::now();
    let topo = toy_topology();
    let actions = [3u8, 0, 17, 3];
    let h = 1e-3;
    let mut worst = (0.0f64, String::new());
    for config in ModelConfig::ALL {
        let mut net: Network<f64> = init_network(config, &topo, 11).map_err(|e| e.to_string())?;
        // batch norm makes conv layers scale-invariant; larger weights keep
        // the difference quotient's truncation error small
        let mut encoders = vec![&mut net.image];
        if let Some(g) = net.gaze.as_mut() {
            encoders.push(g);
        }
        for enc in encoders {
            for stage in &mut enc.stages {
                stage.conv.weight.iter_mut().for_each(|w| *w *= 16.0);
            }
        }
        let inputs: Inputs<f64> = random_inputs(config, 4, topo.input_size, 5);
        let batch_loss = |net: &Network<f64>| loss(&net.forward(&inputs, Mode::Train).unwrap(), &actions);
        let (_, grads, _) = net.gradients(&inputs, &actions).map_err(|e| e.to_string())?;
        let analytic: Vec<Vec<f64>> = grads.params().into_iter().map(|(_, t, _)| t.clone()).collect();
        let names: Vec<String> = net.params().into_iter().map(|(n, _, _)| n).collect();
        for (ti, name) in names.iter().enumerate() {
            for j in 0..analytic[ti].len() {
                let orig = net.params()[ti].1[j];
                net.params_mut()[ti].1[j] = orig + h;
                let up = batch_loss(&net);
                net.params_mut()[ti].1[j] = orig - h;
                let down = batch_loss(&net);
                net.params_mut()[ti].1[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[ti][j];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                if err > worst.0 {
                    worst = (err, format!("{config} {name}[{j}]"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst.0 < 1e-4, || format!("max relative error {:.2e} at {}", worst.0, worst.1))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:.1?}"))?;
    Ok(format!("max relative error {:.2e} over configs A-F in {elapsed:.1?}", worst.0))
}

// ------------------------------------------------------------ gate identity

fn gate_identity() -> Check {
    let topo = Topology::compact();
    let pairs = [
        (ModelConfig::A, ModelConfig::B),
        (ModelConfig::C, ModelConfig::D),
        (ModelConfig::E, ModelConfig::F),
    ];
    let mut worst = 0.0f32;
    let mut cases = 0;
    for t in 0..100u64 {
        let (with, without) = pairs[t as usize % 3];
        let mut net: Network<f32> = init_network(with, &topo, t).map_err(|e| e.to_string())?;
        net.past.as_mut().unwrap().gate.bias.iter_mut().for_each(|b| *b = -100.0);
        let plain = Network {
            config: without,
            past: None,
            ..net.clone()
        };
        let x: Inputs<f32> = random_inputs(with, 2, topo.input_size, 1000 + t);
        let x_plain = Inputs {
            past: vec![],
            ..x.clone()
        };
        for mode in [Mode::Train, Mode::Eval] {
            let a = net.forward(&x, mode).map_err(|e| e.to_string())?;
            let b = plain.forward(&x_plain, mode).map_err(|e| e.to_string())?;
            for (u, v) in a.logits.iter().zip(&b.logits) {
                worst = worst.max((u - v).abs());
            }
        }
        cases += 1;
    }
    ensure(worst < 1e-5, || format!("max logit difference {worst:e}"))?;
    Ok(format!("{cases} inputs, max logit difference {worst:e}"))
}

// ------------------------------------------------------------------ masking

fn masking_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mean: Vec<f32> = (0..FRAME_PIXELS).map(|_| rng.random()).collect();
    let full = FRAME_SIZE as f64 * std::f64::consts::SQRT_2;
    for t in 0..1000 {
        let frame: Vec<f32> = (0..FRAME_PIXELS).map(|_| rng.random()).collect();
        let region = FocusRegion {
            center: [rng.random_range(0.0..84.0), rng.random_range(0.0..84.0)],
            radius_px: rng.random_range(0.5..40.0),
        };
        let out = mask_periphery(&frame, &region, &mean).map_err(|e| e.to_string())?;
        for y in 0..FRAME_SIZE {
            for x in 0..FRAME_SIZE {
                let i = y * FRAME_SIZE + x;
                let dx = x as f64 - region.center[0] as f64;
                let dy = y as f64 - region.center[1] as f64;
                let inside = (dx * dx + dy * dy).sqrt() <= region.radius_px;
                let want = if inside { frame[i] } else { mean[i] };
                ensure(out[i].to_bits() == want.to_bits(), || format!("frame {t}: pixel ({x},{y}) not conserved"))?;
            }
        }
        let twice = mask_periphery(&out, &region, &mean).map_err(|e| e.to_string())?;
        ensure(twice.iter().zip(&out).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("frame {t}: masking is not idempotent")
        })?;
        let whole = FocusRegion {
            center: region.center,
            radius_px: full,
        };
        let same = mask_periphery(&frame, &whole, &mean).map_err(|e| e.to_string())?;
        ensure(same.iter().zip(&frame).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("frame {t}: full radius changed the frame")
        })?;
    }
    Ok("1000 frames: idempotent, conserving and identity at full radius, bit-exact".into())
}

// ---------------------------------------------------------------- gaze maps

fn brute_force(points: &[GazePoint], sigma: f64) -> Vec<f64> {
    let mut m = vec![0.0; FRAME_PIXELS];
    for y in 0..FRAME_SIZE {
        for x in 0..FRAME_SIZE {
            for p in points {
                let dx = x as f64 - p[0] as f64;
                let dy = y as f64 - p[1] as f64;
                m[y * FRAME_SIZE + x] += (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let max = m.iter().cloned().fold(0.0, f64::max);
    m.iter().map(|v| v / max).collect()
}

fn gaze_map_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let sigmas = stack_sigmas_px(DEFAULT_PIXELS_PER_DEGREE).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for t in 0..100 {
        let k = rng.random_range(1..6);
        let pts: Vec<GazePoint> = (0..k)
            .map(|_| [rng.random_range(0.0..83.99), rng.random_range(0.0..83.99)])
            .collect();
        for sigma in sigmas {
            let fast = render_gaze_map(&pts, sigma).map_err(|e| e.to_string())?;
            for (a, b) in fast.iter().zip(brute_force(&pts, sigma)) {
                worst = worst.max((*a as f64 - b).abs());
            }
        }
        ensure(worst < 1e-6, || format!("set {t}: deviation {worst:e} from direct summation"))?;

        // shifted copies of interior points
        let inner: Vec<GazePoint> = (0..k)
            .map(|_| [rng.random_range(25.0..55.0), rng.random_range(25.0..55.0)])
            .collect();
        let (dx, dy) = (rng.random_range(-6i32..=6), rng.random_range(-6i32..=6));
        let moved: Vec<GazePoint> = inner.iter().map(|p| [p[0] + dx as f32, p[1] + dy as f32]).collect();
        let a = render_gaze_map(&inner, 4.0).map_err(|e| e.to_string())?;
        let b = render_gaze_map(&moved, 4.0).map_err(|e| e.to_string())?;
        for y in 8..76 {
            for x in 8..76 {
                let (sx, sy) = ((x as i32 + dx) as usize, (y as i32 + dy) as usize);
                ensure((a[y * FRAME_SIZE + x] - b[sy * FRAME_SIZE + sx]).abs() < 1e-6, || {
                    format!("set {t}: translation changed the map at ({x},{y})")
                })?;
            }
        }

        let stack = build_gaze_stack(&pts[..1], DEFAULT_PIXELS_PER_DEGREE).map_err(|e| e.to_string())?;
        for c in 1..GAZE_CHANNELS {
            ensure(stack.map(c - 1).iter().zip(stack.map(c)).all(|(lo, hi)| hi >= lo), || {
                format!("set {t}: channel {c} is narrower than channel {}", c - 1)
            })?;
        }
    }
    Ok(format!(
        "100 point sets: max deviation {worst:.1e}, translation-equivariant, spread monotone"
    ))
}

// ------------------------------------------------------- synthetic recovery

const RECOVERY_EPISODES: usize = 25;
const RECOVERY_LENGTH: usize = 200;
const CHANCE_MARGIN: f64 = 0.07;
const HIGH_ACCURACY: f64 = 0.90;

fn synthetic_recovery() -> Check {
    let start = Instant::now();
    let schedule = TrainSchedule {
        quasi_epochs: 30,
        batches_per_epoch: 50,
        ..Default::default()
    };
    let ppd = DEFAULT_PIXELS_PER_DEGREE;
    let mut misses = Vec::new();
    let mut lines = Vec::new();
    for (ki, kind) in SyntheticPolicyKind::ALL.into_iter().enumerate() {
        let rec = generate_recording(kind, RECOVERY_EPISODES, RECOVERY_LENGTH, 4, 100 + ki as u64)
            .map_err(|e| e.to_string())?;
        let store = build_replay(&rec.frame_source(), &[rec.session()], kind.name(), None, ppd)
            .map_err(|e| e.to_string())?;
        let split = block_split(&store, DEFAULT_BLOCK_SIZE, DEFAULT_VAL_FRACTION, 1).map_err(|e| e.to_string())?;
        let mean = compute_mean_frame(&store, &split).map_err(|e| e.to_string())?;
        let cache = GazeMapCache::compute(&store, ppd).map_err(|e| e.to_string())?;
        let ctx = SamplerContext::new(&store, mean, ppd)
            .and_then(|c| c.with_gaze_cache(&cache))
            .map_err(|e| e.to_string())?;
        let common = common_choice_accuracy(&store, &split).map_err(|e| e.to_string())?;
        let run = run_ablation(&ctx, &split, &ModelConfig::ALL, &Topology::compact(), &schedule, &|_, _| {})
            .map_err(|e| e.to_string())?;
        let mut cells = Vec::new();
        for config in ModelConfig::ALL {
            let acc = run.result.accuracy(config);
            let expected = theoretical_accuracy(kind, config);
            let ok = match (expected, acc) {
                (ExpectedAccuracy::High, Some(a)) => a >= HIGH_ACCURACY,
                (ExpectedAccuracy::Chance, Some(a)) => (a - common).abs() <= CHANCE_MARGIN,
                (_, None) => false,
            };
            let tag = if expected == ExpectedAccuracy::High { "high" } else { "chance" };
            let shown = acc.map_or("failed".into(), |a| format!("{a:.3}"));
            cells.push(format!("{config}={shown}"));
            if !ok {
                misses.push(format!("{kind}/{config} {shown} ({tag}, common {common:.3})"));
            }
        }
        lines.push(format!("{kind} (common {common:.3}): {}", cells.join(" ")));
        println!("      {}", lines.last().unwrap());
    }
    let elapsed = start.elapsed();
    ensure(misses.is_empty(), || format!("{} pairs off target: {}", misses.len(), misses.join("; ")))?;
    ensure(elapsed < Duration::from_secs(2 * 3600), || format!("took {elapsed:.0?}"))?;
    Ok(format!("30 pairs on target in {:.1} min", elapsed.as_secs_f64() / 60.0))
}

// ------------------------------------------------------------- drop matrix

fn game(id: &str, accs: [f64; 6], common: f64) -> GameResult {
    GameResult {
        game_id: id.into(),
        subject_id: None,
        accuracies: accs.map(Some),
        common,
        n_train: 900,
        n_val: 100,
        failures: vec![],
    }
}

fn drop_matrix_formula() -> Check {
    use ModelConfig::*;
    let g = game("g", [0.60, 0.58, 0.5, 0.5, 0.5, 0.5], 0.20);
    let v = normalized_drop(&g, B, A).ok_or("entry (B,A) missing")?;
    // 0.58, 0.60 and 0.20 have no exact binary form; the quotient of the
    // nearest doubles lies a few ulps from −5
    ensure((v - -5.0).abs() < 1e-12, || format!("entry (B,A) = {v}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let games: Vec<GameResult> = (0..50)
        .map(|i| {
            let common = rng.random_range(0.05..0.3);
            game(&format!("g{i}"), std::array::from_fn(|_| rng.random_range(0.0..1.0)), common)
        })
        .collect();
    let m = drop_matrix(&games).map_err(|e| e.to_string())?;
    for c in ModelConfig::ALL {
        ensure(m.entry(c, c).per_game.iter().all(|v| *v == Some(0.0)), || format!("diagonal ({c},{c}) not 0"))?;
    }
    for r in &games {
        for a in ModelConfig::ALL {
            for b in ModelConfig::ALL {
                let (x, y) = (raw_difference(r, a, b).unwrap(), raw_difference(r, b, a).unwrap());
                ensure(x == -y, || format!("{}: numerator ({a},{b}) {x} vs ({b},{a}) {y}", r.game_id))?;
            }
        }
    }
    Ok(format!(
        "(B,A) = {v} (|Δ| {:.0e}), diagonal 0 and numerators antisymmetric on 50 games",
        (v + 5.0).abs()
    ))
}

// ------------------------------------------------------------------ k-means

fn exhaustive_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut best = f64::INFINITY;
    for mask in 1..(1u32 << n) - 1 {
        let mut total = 0.0;
        for side in [true, false] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| ((mask >> i) & 1 == 1) == side).map(|i| &points[i]).collect();
            let mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
            total += members.iter().map(|p| d2(p, &mean)).sum::<f64>();
        }
        best = best.min(total);
    }
    best
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.random()).collect()).collect()
}

fn kmeans_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut instances = 0;
    for n in 2..=8 {
        for t in 0..100u64 {
            let dim = rng.random_range(1..=6);
            let pts = random_points(&mut rng, n, dim);
            let m = kmeans_fit(&pts, &KMeansParams { k: 2, seed: t, ..Default::default() }).map_err(|e| e.to_string())?;
            let best = exhaustive_two_means(&pts);
            ensure((m.wcss - best).abs() <= 1e-9 * best.max(1.0), || {
                format!("n={n} instance {t}: WCSS {} vs optimum {best}", m.wcss)
            })?;
            instances += 1;
        }
    }
    for t in 0..100u64 {
        let n = rng.random_range(20..200);
        let pts = random_points(&mut rng, n, 6);
        let m = kmeans_fit(&pts, &KMeansParams { seed: t, restarts: 2, ..Default::default() }).map_err(|e| e.to_string())?;
        ensure(m.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), || format!("instance {t}: WCSS increased"))?;
    }
    Ok(format!("{instances} instances with 2-8 points at the exhaustive optimum; 100 monotone traces"))
}

// --------------------------------------------------------------- silhouette

fn silhouette_oracle() -> Check {
    let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![4.0, 0.0], vec![6.0, 0.0]];
    let s = silhouette(&pts, &[0, 0, 1, 1], 2000, 0).map_err(|e| e.to_string())?;
    let want = [(5.0 - 1.0) / 5.0, (4.0 - 1.0) / 4.0, (3.5 - 2.0) / 3.5, (5.5 - 2.0) / 5.5];
    for (got, w) in s.scores.iter().zip(want) {
        ensure((got - w).abs() < 1e-9, || format!("fixture score {got} vs {w}"))?;
    }
    let mut dup = vec![vec![0.2; 6]; 7];
    dup.extend(vec![vec![0.7; 6]; 5]);
    let labels: Vec<usize> = (0..12).map(|i| (i >= 7) as usize).collect();
    let s = silhouette(&dup, &labels, 2000, 0).map_err(|e| e.to_string())?;
    ensure(s.scores.iter().all(|&v| v == 1.0), || "separated duplicates do not all score 1".into())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pts = random_points(&mut rng, 60, 6);
    for t in 0..1000u64 {
        let k = rng.random_range(2..6);
        let mut labels: Vec<usize> = (0..60).map(|_| rng.random_range(0..k)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let s = silhouette(&pts, &labels, 2000, t).map_err(|e| e.to_string())?;
        ensure(s.scores.iter().all(|v| (-1.0..=1.0).contains(v)), || format!("labeling {t} out of range"))?;
    }
    Ok("fixture within 1e-9, duplicates score 1, 1000 labelings in [-1, 1]".into())
}

// -------------------------------------------------------------------- t-SNE

fn tsne_calibration() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let pts = random_points(&mut rng, 1000, 6);
    let n = pts.len();
    let target = DEFAULT_PERPLEXITY.ln();
    let p = conditional_affinities(&pts, DEFAULT_PERPLEXITY).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..n {
        let h: f64 = p[i * n..(i + 1) * n].iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
        worst = worst.max((h - target).abs() / target);
    }
    ensure(worst < 1e-3, || format!("entropy off by {worst:e} relative"))?;
    let joint = joint_affinities(&pts, DEFAULT_PERPLEXITY).map_err(|e| e.to_string())?;
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((joint[i * n + j] - joint[j * n + i]).abs());
        }
    }
    let sum: f64 = joint.iter().sum();
    ensure(asym < 1e-6 && (sum - 1.0).abs() < 1e-6, || format!("asymmetry {asym:e}, sum {sum}"))?;
    Ok(format!(
        "1000 points: entropy error {worst:.1e} relative, asymmetry {asym:.1e}, sum - 1 = {:.1e}",
        sum - 1.0
    ))
}

// -------------------------------------------------------------- determinism

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ablation-lab"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(root: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let mut run_dirs = Vec::new();
    for (kind, seed) in [("focus", "5"), ("memory", "6")] {
        let rec = p(&format!("rec_{kind}"));
        let store = p(&format!("store_{kind}"));
        let run = p(&format!("run_{kind}"));
        cli(&["synth", "--kind", kind, "--length", "150", "--episodes", "2", "--seed", seed, "--out", &rec])?;
        let labels = format!("{rec}/{seed}_SYN_{kind}.txt");
        cli(&["ingest", "--frames", &format!("{rec}/frames"), "--labels", &labels, "--out", &store, "--game", kind])?;
        cli(&[
            "run", "--store", &store, "--out", &run, "--seed", "3", "--epochs", "2", "--batches", "4",
            "--batch-size", "16", "--quiet",
        ])?;
        run_dirs.push(run);
    }
    let analysis = p("analysis");
    cli(&[
        "analyze", "--results", &run_dirs[0], &run_dirs[1], "--out", &analysis, "--seed", "2", "--perplexity", "10",
        "--tsne-iterations", "250",
    ])?;
    let mut files = Vec::new();
    for dir in run_dirs.iter().chain([&analysis]) {
        let mut names: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        names.sort();
        for f in names {
            let rel = f.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            files.push((rel, std::fs::read(&f).map_err(|e| e.to_string())?));
        }
    }
    Ok(files)
}

fn determinism() -> Check {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    ensure(first.len() == second.len() && first.len() > 20, || {
        format!("{} vs {} CSV files", first.len(), second.len())
    })?;
    for ((na, da), (nb, db)) in first.iter().zip(&second) {
        ensure(na == nb && da == db, || format!("{na} differs between runs"))?;
    }
    let tsne_rows = first
        .iter()
        .find(|(n, _)| n.ends_with("tsne.csv"))
        .map_or(0, |(_, d)| d.iter().filter(|&&c| c == b'\n').count());
    ensure(tsne_rows > 1, || "t-SNE table is empty".into())?;
    Ok(format!("{} CSV files byte-identical across two full pipelines", first.len()))
}

// ----------------------------------------------------------------- protocol

fn protocol_constants() -> Check {
    let s = TrainSchedule::default();
    let checks: [(&str, bool); 14] = [
        ("quasi-epochs 150", s.quasi_epochs == 150),
        ("batches per epoch 200", s.batches_per_epoch == 200),
        ("batch size 64", s.batch_size == 64 && DEFAULT_BATCH_SIZE == 64),
        ("lr 1e-3 through epoch 100", s.lr_initial == 1e-3 && s.learning_rate(100) == 1e-3),
        ("lr 1e-4 from epoch 101", s.lr_after_drop == 1e-4 && s.learning_rate(101) == 1e-4),
        ("weight decay 1e-2", s.weight_decay == 1e-2),
        ("clip norm 1.0", s.grad_clip_norm == 1.0),
        ("block size 50", DEFAULT_BLOCK_SIZE == 50),
        ("val fraction 0.10", DEFAULT_VAL_FRACTION == 0.10),
        ("sigmas 1,3,5,10 deg", GAZE_SIGMAS_DEG == [1.0, 3.0, 5.0, 10.0]),
        ("stride 15", PAST_STRIDE == 15),
        ("3 past states", PAST_STATES == 3),
        ("k = 5", DEFAULT_K == 5),
        ("perplexity 80", DEFAULT_PERPLEXITY == 80.0),
    ];
    let bad: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    ensure(bad.is_empty(), || format!("library defaults differ: {}", bad.join(", ")))?;
    let file = RunConfig::default();
    ensure(
        file.split.block_size == 50
            && file.split.val_fraction == 0.10
            && file.analysis.k == 5
            && file.analysis.perplexity == 80.0,
        || "run-configuration defaults differ from the library".into(),
    )?;
    Ok(format!("{} library defaults and the run-configuration defaults match", checks.len()))
}

// --------------------------------------------------------------------- main

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("gradient-check", gradient_check),
        ("gate-off-identity", gate_identity),
        ("masking-suite", masking_suite),
        ("gaze-map-suite", gaze_map_suite),
        ("synthetic-recovery", synthetic_recovery),
        ("drop-matrix-formula", drop_matrix_formula),
        ("kmeans-oracle", kmeans_oracle),
        ("silhouette-oracle", silhouette_oracle),
        ("tsne-calibration", tsne_calibration),
        ("determinism", determinism),
        ("protocol-constants", protocol_constants),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            println!("SKIP {id:>2} {name}");
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail} [{t:.1?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {detail} [{t:.1?}]");
            }
        }
    }
    println!("{failed} failed");
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
