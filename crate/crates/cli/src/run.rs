//! `run`: train the selected configurations on one store and write the
//! per-game results.

use std::path::Path;

use ablation_lab::ablation::{run_ablation, ConfigFailure, GameResult};
use ablation_lab::clustering::{collect_response_vectors, ResponseVector};
use ablation_lab::gazemaps::GazeMapCache;
use ablation_lab::ingest::{block_split, compute_mean_frame, ReplayStore, SplitLabel};
use ablation_lab::nn::checkpoint::save_checkpoint;
use ablation_lab::nn::Topology;
use ablation_lab::sampler::{ModelConfig, SamplerContext};
use ablation_lab::training::{EpochRecord, TrainSchedule};
use serde::{Deserialize, Serialize};

use crate::config::{required, RunConfig, ScheduleSettings, SplitSettings};
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, fmt_opt, parse_opt, prepare_out_dir, write_json, Table};
use crate::RunArgs;

pub const RUN_MANIFEST: &str = "run.json";
pub const GAME_RESULTS: &str = "game_results.csv";
pub const FAILURES: &str = "failures.json";
pub const RESPONSES: &str = "responses.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn history_file(config: ModelConfig) -> String {
    format!("history_{config}.csv")
}

/// Everything that determined a run, written as `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub game_id: String,
    pub subject_id: Option<String>,
    pub configs: Vec<ModelConfig>,
    pub seed: u64,
    pub pixels_per_degree: f64,
    pub topology: Topology,
    pub schedule: TrainSchedule,
    pub split: SplitSettings,
    pub split_fingerprint: String,
    pub n_train: usize,
    pub n_val: usize,
    pub trained: Vec<ModelConfig>,
    pub failed: Vec<ModelConfig>,
    pub responses: usize,
}

pub fn apply_schedule(mut s: TrainSchedule, file: &ScheduleSettings) -> TrainSchedule {
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = file.$f { s.$f = v; } )* };
    }
    set!(
        quasi_epochs,
        batches_per_epoch,
        batch_size,
        lr_initial,
        lr_after_drop,
        lr_drop_epoch,
        weight_decay,
        grad_clip_norm,
        bn_refresh_batches
    );
    s
}

fn run_artifacts() -> Vec<String> {
    let mut names: Vec<String> = [RUN_MANIFEST, GAME_RESULTS, FAILURES, RESPONSES, CHECKPOINT_DIR]
        .map(String::from)
        .to_vec();
    names.extend(ModelConfig::ALL.map(history_file));
    names
}

pub fn run(args: &RunArgs) -> CliResult<RunManifest> {
    let file = RunConfig::load_optional(args.config.as_deref())?;
    let store_dir = required(args.store.clone(), file.paths.store.clone(), "--store")?;
    let out = required(args.out.clone(), file.paths.out.clone(), "--out")?;
    let configs = ModelConfig::parse_list(
        args.configs
            .as_deref()
            .or(file.configs.as_deref())
            .unwrap_or("A,B,C,D,E,F"),
    )?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let topology = args.topology.or(file.topology).unwrap_or_default().topology();
    let mut schedule = apply_schedule(TrainSchedule::default(), &file.schedule);
    schedule.seed = seed;
    if let Some(v) = args.epochs {
        schedule.quasi_epochs = v;
    }
    if let Some(v) = args.batches {
        schedule.batches_per_epoch = v;
    }
    if let Some(v) = args.batch_size {
        schedule.batch_size = v;
    }
    schedule.validate()?;
    topology.validate()?;

    let store = ReplayStore::read(&store_dir)?;
    let ppd = args
        .ppd
        .or(file.pixels_per_degree)
        .unwrap_or(store.geometry.pixels_per_degree);
    let split_settings = SplitSettings {
        seed: Some(file.split.seed.unwrap_or(seed)),
        ..file.split
    };
    let split = block_split(
        &store,
        split_settings.block_size,
        split_settings.val_fraction,
        split_settings.seed.unwrap_or(seed),
    )?;
    let mean = compute_mean_frame(&store, &split)?;
    let cache = if configs.iter().any(|c| c.gaze()) {
        match GazeMapCache::load(&store_dir, ppd, store.len())? {
            Some(c) => Some(c),
            None => Some(GazeMapCache::compute(&store, ppd)?),
        }
    } else {
        None
    };
    let mut ctx = SamplerContext::new(&store, mean, ppd)?;
    if let Some(c) = &cache {
        ctx = ctx.with_gaze_cache(c)?;
    }

    prepare_out_dir(&out, args.force, &run_artifacts().iter().map(String::as_str).collect::<Vec<_>>())?;

    let total = schedule.quasi_epochs;
    let quiet = args.quiet;
    let progress = move |c: ModelConfig, r: &EpochRecord| {
        if !quiet {
            eprintln!(
                "[{c}] epoch {}/{total} loss {:.4} val {}",
                r.epoch,
                r.train_loss,
                r.val_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
            );
        }
    };
    let result = run_ablation(&ctx, &split, &configs, &topology, &schedule, &progress)?;

    let ckpt_dir = out.join(CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;
    for m in &result.models {
        save_checkpoint(&m.network, m.steps, &ckpt_dir, &format!("model_{}", m.config))?;
        write_history(&out.join(history_file(m.config)), &m.history)?;
    }
    write_game_results(&out.join(GAME_RESULTS), std::slice::from_ref(&result.result))?;
    write_json(&out.join(FAILURES), &result.result.failures)?;

    let mut responses = 0;
    if result.models.len() == 6 {
        let vectors = collect_response_vectors(&result.models, &ctx, &split, SplitLabel::Val)?;
        write_responses(&out.join(RESPONSES), &vectors)?;
        responses = vectors.len();
    }

    let manifest = RunManifest {
        game_id: store.game_id.clone(),
        subject_id: store.subject_id.clone(),
        configs,
        seed,
        pixels_per_degree: ppd,
        topology,
        schedule,
        split: split_settings,
        split_fingerprint: split.fingerprint(),
        n_train: result.result.n_train,
        n_val: result.result.n_val,
        trained: result.models.iter().map(|m| m.config).collect(),
        failed: result.result.failures.iter().map(|f| f.config).collect(),
        responses,
    };
    write_json(&out.join(RUN_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> CliResult<()> {
    let mut t = Table::create(path, &["epoch", "learning_rate", "train_loss", "val_accuracy"])?;
    for r in history {
        t.row([
            r.epoch.to_string(),
            fmt_f64(r.learning_rate),
            fmt_f64(r.train_loss),
            fmt_opt(r.val_accuracy),
        ])?;
    }
    t.finish()
}

const RESULT_HEADER: [&str; 11] = [
    "game_id", "subject_id", "acc_A", "acc_B", "acc_C", "acc_D", "acc_E", "acc_F", "common", "n_train", "n_val",
];

/// One row per game; empty accuracy cells mark configurations that failed
/// or were not run.
pub fn write_game_results(path: &Path, results: &[GameResult]) -> CliResult<()> {
    let mut t = Table::create(path, &RESULT_HEADER)?;
    for r in results {
        let mut row = vec![r.game_id.clone(), r.subject_id.clone().unwrap_or_default()];
        row.extend(r.accuracies.iter().map(|a| fmt_opt(*a)));
        row.extend([fmt_f64(r.common), r.n_train.to_string(), r.n_val.to_string()]);
        t.row(row)?;
    }
    t.finish()
}

/// Reads `game_results.csv` plus the sibling `failures.json` when present.
pub fn read_game_results(path: &Path) -> CliResult<Vec<GameResult>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let header = reader.headers().map_err(|e| CliError::csv(path, e))?.clone();
    if header.iter().ne(RESULT_HEADER) {
        return Err(CliError::table(path, "unexpected header"));
    }
    let bad = |what: &str| CliError::table(path, format!("bad {what} value"));
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let mut accuracies = [None; 6];
        for (j, a) in accuracies.iter_mut().enumerate() {
            *a = parse_opt(&rec[2 + j]).map_err(|_| bad(RESULT_HEADER[2 + j]))?;
        }
        out.push(GameResult {
            game_id: rec[0].to_string(),
            subject_id: (!rec[1].is_empty()).then(|| rec[1].to_string()),
            accuracies,
            common: rec[8].parse().map_err(|_| bad("common"))?,
            n_train: rec[9].parse().map_err(|_| bad("n_train"))?,
            n_val: rec[10].parse().map_err(|_| bad("n_val"))?,
            failures: Vec::new(),
        });
    }
    let failures_path = path.with_file_name(FAILURES);
    if out.len() == 1 && failures_path.exists() {
        out[0].failures = crate::output::read_json::<Vec<ConfigFailure>>(&failures_path)?;
    }
    Ok(out)
}

const RESPONSE_HEADER: [&str; 9] = ["game_id", "subject_id", "state", "z_A", "z_B", "z_C", "z_D", "z_E", "z_F"];

pub fn write_responses(path: &Path, vectors: &[ResponseVector]) -> CliResult<()> {
    let mut t = Table::create(path, &RESPONSE_HEADER)?;
    for v in vectors {
        let mut row = vec![
            v.game_id.clone(),
            v.subject_id.clone().unwrap_or_default(),
            v.state.to_string(),
        ];
        row.extend(v.z.iter().map(|&z| fmt_f64(z)));
        t.row(row)?;
    }
    t.finish()
}

pub fn read_responses(path: &Path) -> CliResult<Vec<ResponseVector>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let header = reader.headers().map_err(|e| CliError::csv(path, e))?.clone();
    if header.iter().ne(RESPONSE_HEADER) {
        return Err(CliError::table(path, "unexpected header"));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let mut z = [0.0; 6];
        for (j, v) in z.iter_mut().enumerate() {
            *v = rec[3 + j]
                .parse()
                .map_err(|_| CliError::table(path, format!("bad {} value", RESPONSE_HEADER[3 + j])))?;
        }
        out.push(ResponseVector {
            game_id: rec[0].to_string(),
            subject_id: (!rec[1].is_empty()).then(|| rec[1].to_string()),
            state: rec[2].parse().map_err(|_| CliError::table(path, "bad state value"))?,
            z,
        });
    }
    Ok(out)
}
