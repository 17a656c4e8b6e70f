//! The columnar replay store and its on-disk layout.
//!
//! A store directory holds `manifest.json` plus one little-endian raw array
//! per column:
//!
//! | file              | dtype | shape          |
//! |-------------------|-------|----------------|
//! | `frames.u8`       | u8    | N × 84 × 84    |
//! | `actions.u8`      | u8    | N              |
//! | `rewards.f32`     | f32   | N              |
//! | `terminal.u8`     | u8    | N              |
//! | `episode_ids.u32` | u32   | N              |
//! | `session_ids.u32` | u32   | N              |
//! | `gaze_offsets.u64`| u64   | N + 1          |
//! | `gaze_points.f32` | f32   | G × 2          |
//! | `mean_frame.f32`  | f32   | 84 × 84        |
//!
//! Frames are stored as bytes and read back as `byte / 255`. Gaze for state
//! `i` is `gaze_points[gaze_offsets[i]..gaze_offsets[i + 1]]`, already in
//! 84 × 84 coordinates. The manifest records the SHA-256 of every array.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::labels::FrameLabel;
use crate::util::{
    f32s_to_le, le_to_f32s, le_to_u32s, le_to_u64s, read_file, sha256_hex, u32s_to_le,
    u64s_to_le, write_file,
};
use crate::{Error, GazePoint, Result, FRAME_PIXELS, FRAME_SIZE};

pub const STORE_FORMAT: &str = "ablation-lab-replay";
pub const STORE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Default pixels per degree of visual angle at 84 × 84.
pub const DEFAULT_PIXELS_PER_DEGREE: f64 = 4.0;

/// Resolution of the recorded frames plus the visual-angle conversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceGeometry {
    pub width: u32,
    pub height: u32,
    /// Pixels per degree in the 84 × 84 network frame.
    pub pixels_per_degree: f64,
}

impl SourceGeometry {
    fn scale(&self) -> (f64, f64) {
        (
            FRAME_SIZE as f64 / self.width as f64,
            FRAME_SIZE as f64 / self.height as f64,
        )
    }

    /// Maps a source-pixel gaze sample into 84 × 84 coordinates.
    pub fn rescale(&self, p: GazePoint) -> GazePoint {
        let (sx, sy) = self.scale();
        [(p[0] as f64 * sx) as f32, (p[1] as f64 * sy) as f32]
    }

    /// Maps an 84 × 84 coordinate back to source pixels.
    pub fn rescale_inverse(&self, p: GazePoint) -> GazePoint {
        let (sx, sy) = self.scale();
        [(p[0] as f64 / sx) as f32, (p[1] as f64 / sy) as f32]
    }

    /// Clamps a raw sample into `[0, width) × [0, height)`; the flag reports
    /// whether clamping changed it.
    pub fn clamp(&self, p: GazePoint) -> (GazePoint, bool) {
        let clamp_axis = |v: f32, extent: u32| -> (f32, bool) {
            if v < 0.0 {
                (0.0, true)
            } else if v >= extent as f32 {
                ((extent - 1) as f32, true)
            } else {
                (v, false)
            }
        };
        let (x, cx) = clamp_axis(p[0], self.width);
        let (y, cy) = clamp_axis(p[1], self.height);
        ([x, y], cx || cy)
    }
}

/// One recording session: a label file together with the subject who played it.
#[derive(Debug, Clone)]
pub struct LabelSession {
    pub source: String,
    pub subject_id: Option<String>,
    pub labels: Vec<FrameLabel>,
}

/// Metadata kept per session in the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: u32,
    pub subject_id: Option<String>,
    pub source: String,
}

/// Extracts the subject code from trial file names of the form
/// `<trial>_<subject>_<rest>.txt`, e.g. `100_RZ_3592991_Aug-24.txt` → `RZ`.
pub fn subject_from_filename(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let mut parts = stem.split('_');
    parts.next()?;
    parts
        .next()
        .filter(|s| !s.is_empty())
        .map(str::to_string)
}

/// Anything that can produce the source image for a frame id.
pub trait FrameSource {
    fn load(&self, frame_id: &str) -> Result<GrayImage>;
}

/// Frame images stored as `<frame_id>.<ext>` in one directory.
pub struct ImageDirSource {
    files: HashMap<String, PathBuf>,
}

impl ImageDirSource {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut files = HashMap::new();
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if !matches!(ext.as_deref(), Some("png" | "bmp")) {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path);
            }
        }
        Ok(Self { files })
    }
}

impl FrameSource for ImageDirSource {
    fn load(&self, frame_id: &str) -> Result<GrayImage> {
        let path = self
            .files
            .get(frame_id)
            .ok_or_else(|| Error::MissingFrame(frame_id.to_string()))?;
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        Ok(img.into_luma8())
    }
}

/// Frames held in memory, keyed by frame id.
#[derive(Default)]
pub struct MemoryFrameSource {
    pub frames: HashMap<String, GrayImage>,
}

impl FrameSource for MemoryFrameSource {
    fn load(&self, frame_id: &str) -> Result<GrayImage> {
        self.frames
            .get(frame_id)
            .cloned()
            .ok_or_else(|| Error::MissingFrame(frame_id.to_string()))
    }
}

/// Resizes a grayscale source frame to 84 × 84 bytes.
pub fn resize_frame(img: &GrayImage) -> Vec<u8> {
    image::imageops::resize(img, FRAME_SIZE as u32, FRAME_SIZE as u32, FilterType::Triangle)
        .into_raw()
}

/// Immutable columnar store of states for one game.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStore {
    pub game_id: String,
    pub subject_id: Option<String>,
    pub geometry: SourceGeometry,
    pub sessions: Vec<SessionInfo>,
    /// States dropped at ingest because the action was absent.
    pub dropped_absent_action: usize,
    /// Raw gaze samples that fell outside the source frame and were clamped.
    pub clamped_gaze_points: usize,
    frames: Vec<u8>,
    actions: Vec<u8>,
    rewards: Vec<f32>,
    terminal: Vec<bool>,
    episode_ids: Vec<u32>,
    session_ids: Vec<u32>,
    gaze_offsets: Vec<u64>,
    gaze_points: Vec<GazePoint>,
    mean_frame: Vec<f32>,
    segment_start: Vec<u32>,
}

/// Column data for constructing a store directly.
#[derive(Debug, Clone, Default)]
pub struct StoreColumns {
    pub frames: Vec<u8>,
    pub actions: Vec<u8>,
    pub rewards: Vec<f32>,
    pub terminal: Vec<bool>,
    pub episode_ids: Vec<u32>,
    pub session_ids: Vec<u32>,
    pub gaze: Vec<Vec<GazePoint>>,
}

impl ReplayStore {
    /// Validates columns and derives the mean frame and episode segments.
    pub fn from_columns(
        game_id: impl Into<String>,
        subject_id: Option<String>,
        geometry: SourceGeometry,
        sessions: Vec<SessionInfo>,
        columns: StoreColumns,
    ) -> Result<Self> {
        let n = columns.actions.len();
        if n == 0 {
            return Err(Error::EmptyStore("no states".into()));
        }
        let lengths_ok = columns.frames.len() == n * FRAME_PIXELS
            && columns.rewards.len() == n
            && columns.terminal.len() == n
            && columns.episode_ids.len() == n
            && columns.session_ids.len() == n
            && columns.gaze.len() == n;
        if !lengths_ok {
            return Err(Error::InvalidStore("column lengths disagree".into()));
        }
        let mut gaze_offsets = Vec::with_capacity(n + 1);
        let mut gaze_points = Vec::new();
        gaze_offsets.push(0u64);
        for points in &columns.gaze {
            gaze_points.extend_from_slice(points);
            gaze_offsets.push(gaze_points.len() as u64);
        }
        let mean_frame = mean_of_frames(&columns.frames, 0..n);
        let mut store = Self {
            game_id: game_id.into(),
            subject_id,
            geometry,
            sessions,
            dropped_absent_action: 0,
            clamped_gaze_points: 0,
            frames: columns.frames,
            actions: columns.actions,
            rewards: columns.rewards,
            terminal: columns.terminal,
            episode_ids: columns.episode_ids,
            session_ids: columns.session_ids,
            gaze_offsets,
            gaze_points,
            mean_frame,
            segment_start: Vec::new(),
        };
        store.validate()?;
        store.segment_start = store.compute_segments();
        Ok(store)
    }

    fn validate(&self) -> Result<()> {
        if let Some(&a) = self.actions.iter().find(|&&a| a as usize >= crate::NUM_ACTIONS) {
            return Err(Error::InvalidStore(format!("action {a} out of range")));
        }
        for i in 1..self.len() {
            let same_session = self.session_ids[i] == self.session_ids[i - 1];
            if same_session {
                if self.episode_ids[i] < self.episode_ids[i - 1] {
                    return Err(Error::InvalidStore(format!(
                        "episode id decreases at state {i}"
                    )));
                }
                let changed = self.episode_ids[i] != self.episode_ids[i - 1];
                if changed != self.terminal[i - 1] {
                    return Err(Error::InvalidStore(format!(
                        "terminal flag at state {} disagrees with episode change",
                        i - 1
                    )));
                }
            } else if self.session_ids[i] < self.session_ids[i - 1] {
                return Err(Error::InvalidStore(format!(
                    "session id decreases at state {i}"
                )));
            }
        }
        if self.gaze_points.iter().any(|p| {
            !(p[0] >= 0.0 && p[0] < FRAME_SIZE as f32 && p[1] >= 0.0 && p[1] < FRAME_SIZE as f32)
        }) {
            return Err(Error::InvalidStore("gaze point outside frame".into()));
        }
        Ok(())
    }

    fn compute_segments(&self) -> Vec<u32> {
        let mut starts = Vec::with_capacity(self.len());
        let mut start = 0u32;
        for i in 0..self.len() {
            if i > 0 && (self.session_ids[i] != self.session_ids[i - 1] || self.terminal[i - 1]) {
                start = i as u32;
            }
            starts.push(start);
        }
        starts
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn frame_bytes(&self, i: usize) -> &[u8] {
        &self.frames[i * FRAME_PIXELS..(i + 1) * FRAME_PIXELS]
    }

    /// Writes frame `i` as `[0,1]` reals into `out`.
    pub fn frame_into(&self, i: usize, out: &mut [f32]) {
        for (o, &b) in out.iter_mut().zip(self.frame_bytes(i)) {
            *o = b as f32 / 255.0;
        }
    }

    pub fn frame(&self, i: usize) -> Vec<f32> {
        let mut out = vec![0.0; FRAME_PIXELS];
        self.frame_into(i, &mut out);
        out
    }

    pub fn action(&self, i: usize) -> u8 {
        self.actions[i]
    }

    pub fn actions(&self) -> &[u8] {
        &self.actions
    }

    pub fn reward(&self, i: usize) -> f32 {
        self.rewards[i]
    }

    pub fn terminal(&self, i: usize) -> bool {
        self.terminal[i]
    }

    pub fn episode_id(&self, i: usize) -> u32 {
        self.episode_ids[i]
    }

    pub fn session_id(&self, i: usize) -> u32 {
        self.session_ids[i]
    }

    pub fn gaze(&self, i: usize) -> &[GazePoint] {
        &self.gaze_points[self.gaze_offsets[i] as usize..self.gaze_offsets[i + 1] as usize]
    }

    /// Mean over every stored frame, computed at ingest.
    pub fn mean_frame(&self) -> &[f32] {
        &self.mean_frame
    }

    /// Index of the first state of the episode containing state `i`.
    pub fn episode_start(&self, i: usize) -> usize {
        self.segment_start[i] as usize
    }

    /// Subject who played the session containing state `i`.
    pub fn subject_of(&self, i: usize) -> Option<&str> {
        let sid = self.session_ids[i];
        self.sessions
            .iter()
            .find(|s| s.id == sid)
            .and_then(|s| s.subject_id.as_deref())
    }

    pub fn total_gaze_points(&self) -> usize {
        self.gaze_points.len()
    }

    /// Writes the store directory. Fails if `dir` already holds a manifest.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let terminal: Vec<u8> = self.terminal.iter().map(|&t| t as u8).collect();
        let gaze_flat: Vec<f32> = self.gaze_points.iter().flat_map(|p| *p).collect();
        let n = self.len();
        let arrays: Vec<(&str, &str, Vec<usize>, Vec<u8>)> = vec![
            ("frames", "u8", vec![n, FRAME_SIZE, FRAME_SIZE], self.frames.clone()),
            ("actions", "u8", vec![n], self.actions.clone()),
            ("rewards", "f32", vec![n], f32s_to_le(&self.rewards)),
            ("terminal", "u8", vec![n], terminal),
            ("episode_ids", "u32", vec![n], u32s_to_le(&self.episode_ids)),
            ("session_ids", "u32", vec![n], u32s_to_le(&self.session_ids)),
            ("gaze_offsets", "u64", vec![n + 1], u64s_to_le(&self.gaze_offsets)),
            ("gaze_points", "f32", vec![self.gaze_points.len(), 2], f32s_to_le(&gaze_flat)),
            ("mean_frame", "f32", vec![FRAME_SIZE, FRAME_SIZE], f32s_to_le(&self.mean_frame)),
        ];
        let mut entries = BTreeMap::new();
        for (name, dtype, shape, bytes) in arrays {
            let file = format!("{name}.{dtype}");
            write_file(&dir.join(&file), &bytes)?;
            entries.insert(
                name.to_string(),
                ArrayEntry {
                    file,
                    dtype: dtype.to_string(),
                    shape,
                    sha256: sha256_hex(&bytes),
                },
            );
        }
        let manifest = StoreManifest {
            format: STORE_FORMAT.to_string(),
            version: STORE_VERSION,
            game_id: self.game_id.clone(),
            subject_id: self.subject_id.clone(),
            num_states: n,
            frame_size: FRAME_SIZE,
            geometry: self.geometry,
            sessions: self.sessions.clone(),
            dropped_absent_action: self.dropped_absent_action,
            clamped_gaze_points: self.clamped_gaze_points,
            arrays: entries,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    /// Reads and checksum-verifies a store directory.
    pub fn read(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: StoreManifest = serde_json::from_slice(&read_file(&manifest_path)?)?;
        if manifest.format != STORE_FORMAT || manifest.version != STORE_VERSION {
            return Err(Error::InvalidStore(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        if manifest.frame_size != FRAME_SIZE {
            return Err(Error::InvalidStore(format!(
                "frame size {} != {FRAME_SIZE}",
                manifest.frame_size
            )));
        }
        let load = |name: &str, expected_len: usize| -> Result<Vec<u8>> {
            let entry = manifest
                .arrays
                .get(name)
                .ok_or_else(|| Error::InvalidStore(format!("manifest lacks array {name}")))?;
            let bytes = read_file(&dir.join(&entry.file))?;
            if bytes.len() != expected_len {
                return Err(Error::InvalidStore(format!(
                    "{} has {} bytes, expected {expected_len}",
                    entry.file,
                    bytes.len()
                )));
            }
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(Error::ChecksumMismatch(entry.file.clone()));
            }
            Ok(bytes)
        };
        let n = manifest.num_states;
        let frames = load("frames", n * FRAME_PIXELS)?;
        let actions = load("actions", n)?;
        let rewards = le_to_f32s(&load("rewards", n * 4)?);
        let terminal: Vec<bool> = load("terminal", n)?.into_iter().map(|b| b != 0).collect();
        let episode_ids = le_to_u32s(&load("episode_ids", n * 4)?);
        let session_ids = le_to_u32s(&load("session_ids", n * 4)?);
        let gaze_offsets = le_to_u64s(&load("gaze_offsets", (n + 1) * 8)?);
        let total_gaze = *gaze_offsets.last().unwrap_or(&0) as usize;
        let gaze_flat = le_to_f32s(&load("gaze_points", total_gaze * 8)?);
        let mean_frame = le_to_f32s(&load("mean_frame", FRAME_PIXELS * 4)?);
        let gaze_points = gaze_flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        if gaze_offsets.windows(2).any(|w| w[0] > w[1]) || gaze_offsets.first() != Some(&0) {
            return Err(Error::InvalidStore("gaze offsets not monotone".into()));
        }
        let mut store = Self {
            game_id: manifest.game_id,
            subject_id: manifest.subject_id,
            geometry: manifest.geometry,
            sessions: manifest.sessions,
            dropped_absent_action: manifest.dropped_absent_action,
            clamped_gaze_points: manifest.clamped_gaze_points,
            frames,
            actions,
            rewards,
            terminal,
            episode_ids,
            session_ids,
            gaze_offsets,
            gaze_points,
            mean_frame,
            segment_start: Vec::new(),
        };
        if n == 0 {
            return Err(Error::EmptyStore("manifest lists zero states".into()));
        }
        store.validate()?;
        store.segment_start = store.compute_segments();
        Ok(store)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayEntry {
    file: String,
    dtype: String,
    shape: Vec<usize>,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreManifest {
    format: String,
    version: u32,
    game_id: String,
    subject_id: Option<String>,
    num_states: usize,
    frame_size: usize,
    geometry: SourceGeometry,
    sessions: Vec<SessionInfo>,
    dropped_absent_action: usize,
    clamped_gaze_points: usize,
    arrays: BTreeMap<String, ArrayEntry>,
}

/// Pixelwise mean of the byte frames at `indices`, as `[0,1]` reals.
pub(crate) fn mean_of_frames(frames: &[u8], indices: impl IntoIterator<Item = usize>) -> Vec<f32> {
    let mut acc = vec![0u64; FRAME_PIXELS];
    let mut count = 0u64;
    for i in indices {
        for (a, &b) in acc.iter_mut().zip(&frames[i * FRAME_PIXELS..(i + 1) * FRAME_PIXELS]) {
            *a += b as u64;
        }
        count += 1;
    }
    acc.iter()
        .map(|&s| (s as f64 / (count.max(1) as f64 * 255.0)) as f32)
        .collect()
}

/// Builds a store from label sessions and their frame images.
///
/// Frames are resized to 84 × 84 grayscale; gaze is clamped to the source
/// frame and rescaled by the same factors. States without an action are
/// dropped. Each session gets its own session id, in input order; with a
/// `subject_filter` only matching sessions are kept.
pub fn build_replay(
    frames: &dyn FrameSource,
    sessions: &[LabelSession],
    game_id: &str,
    subject_filter: Option<&str>,
    pixels_per_degree: f64,
) -> Result<ReplayStore> {
    if !(pixels_per_degree > 0.0) || !pixels_per_degree.is_finite() {
        return Err(Error::NonPositivePpd(pixels_per_degree));
    }
    let mut geometry: Option<SourceGeometry> = None;
    let mut columns = StoreColumns::default();
    let mut infos = Vec::new();
    let mut dropped = 0usize;
    let mut clamped = 0usize;

    for (sid, session) in sessions.iter().enumerate() {
        if let Some(want) = subject_filter {
            if session.subject_id.as_deref() != Some(want) {
                continue;
            }
        }
        let kept: Vec<&FrameLabel> = session
            .labels
            .iter()
            .filter(|l| {
                let keep = l.action.is_some();
                if !keep {
                    dropped += 1;
                }
                keep
            })
            .collect();
        if kept.is_empty() {
            continue;
        }
        for w in kept.windows(2) {
            if w[1].episode_id < w[0].episode_id {
                return Err(Error::InvalidStore(format!(
                    "episode id decreases at frame {:?} in {}",
                    w[1].frame_id, session.source
                )));
            }
        }
        infos.push(SessionInfo {
            id: sid as u32,
            subject_id: session.subject_id.clone(),
            source: session.source.clone(),
        });
        for (k, label) in kept.iter().enumerate() {
            let img = frames.load(&label.frame_id)?;
            let geo = *geometry.get_or_insert(SourceGeometry {
                width: img.width(),
                height: img.height(),
                pixels_per_degree,
            });
            if img.width() != geo.width || img.height() != geo.height {
                return Err(Error::InvalidStore(format!(
                    "frame {:?} is {}x{}, expected {}x{}",
                    label.frame_id,
                    img.width(),
                    img.height(),
                    geo.width,
                    geo.height
                )));
            }
            columns.frames.extend(resize_frame(&img));
            columns.actions.push(label.action.expect("filtered above"));
            columns.rewards.push(label.unclipped_reward as f32);
            let last_of_episode = kept
                .get(k + 1)
                .map_or(true, |next| next.episode_id != label.episode_id);
            columns.terminal.push(last_of_episode);
            columns.episode_ids.push(label.episode_id);
            columns.session_ids.push(sid as u32);
            let gaze = label
                .gaze_points
                .iter()
                .map(|&p| {
                    let (p, was_clamped) = geo.clamp(p);
                    clamped += was_clamped as usize;
                    let q = geo.rescale(p);
                    [q[0].min(FRAME_SIZE as f32 - 1e-3), q[1].min(FRAME_SIZE as f32 - 1e-3)]
                })
                .collect();
            columns.gaze.push(gaze);
        }
    }

    let geometry = match geometry {
        Some(g) if !columns.actions.is_empty() => g,
        _ => {
            return Err(Error::EmptyStore(match subject_filter {
                Some(s) => format!("no state survives subject filter {s:?}"),
                None => "no labelled state with an action".into(),
            }))
        }
    };
    let subject_id = subject_filter.map(str::to_string);
    let mut store = ReplayStore::from_columns(game_id, subject_id, geometry, infos, columns)?;
    store.dropped_absent_action = dropped;
    store.clamped_gaze_points = clamped;
    Ok(store)
}
