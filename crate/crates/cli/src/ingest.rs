use std::path::PathBuf;

use ablation_lab::gazemaps::GazeMapCache;
use ablation_lab::ingest::{
    build_replay, read_label_session, ActionVocabulary, ImageDirSource, DEFAULT_PIXELS_PER_DEGREE, MANIFEST_FILE,
};
use serde::Serialize;

use crate::config::{required, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::prepare_out_dir;
use crate::IngestArgs;

/// Files and directories a store write produces.
pub const STORE_ARTIFACTS: [&str; 11] = [
    MANIFEST_FILE,
    "frames.u8",
    "actions.u8",
    "rewards.f32",
    "terminal.u8",
    "episode_ids.u32",
    "session_ids.u32",
    "gaze_offsets.u64",
    "gaze_points.f32",
    "mean_frame.f32",
    "gaze_maps",
];

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub store: PathBuf,
    pub game_id: String,
    pub subject_id: Option<String>,
    pub states: usize,
    pub sessions: usize,
    pub dropped_absent_action: usize,
    pub clamped_gaze_points: usize,
    pub gaze_cache: bool,
}

pub fn ingest(args: &IngestArgs) -> CliResult<IngestSummary> {
    let file = RunConfig::load_optional(args.config.as_deref())?;
    let frames = required(args.frames.clone(), file.paths.frames.clone(), "--frames")?;
    let out = required(args.out.clone(), file.paths.out.clone(), "--out")?;
    let labels = if args.labels.is_empty() { file.paths.labels.clone() } else { args.labels.clone() };
    if labels.is_empty() {
        return Err(CliError::Config("missing required setting --labels".into()));
    }
    let ppd = args.ppd.or(file.pixels_per_degree).unwrap_or(DEFAULT_PIXELS_PER_DEGREE);
    let subject = args.subject.clone().or(file.subject.clone());
    let game = match args.game.clone().or(file.game.clone()) {
        Some(g) => g,
        None => labels[0]
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "game".into()),
    };

    let vocabulary = ActionVocabulary::default();
    let sessions = labels
        .iter()
        .map(|p| read_label_session(p, &vocabulary))
        .collect::<Result<Vec<_>, _>>()?;
    let source = ImageDirSource::open(&frames)?;
    let store = build_replay(&source, &sessions, &game, subject.as_deref(), ppd)?;

    prepare_out_dir(&out, args.force, &STORE_ARTIFACTS)?;
    store.write(&out)?;
    if args.gaze_cache {
        GazeMapCache::compute(&store, ppd)?.write(&out)?;
    }
    Ok(IngestSummary {
        store: out,
        game_id: store.game_id.clone(),
        subject_id: store.subject_id.clone(),
        states: store.len(),
        sessions: store.sessions.len(),
        dropped_absent_action: store.dropped_absent_action,
        clamped_gaze_points: store.clamped_gaze_points,
        gaze_cache: args.gaze_cache,
    })
}
