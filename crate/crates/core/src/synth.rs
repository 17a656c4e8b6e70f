//! Scripted recordings whose action depends on one known information source.
//!
//! Scenes are designed in 84 × 84 network coordinates and rendered at the
//! 160 × 210 source resolution, so ingest maps them back onto the design.
//! Each frame gets one gaze sample drawn independently of everything else.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{format_label_line, FrameLabel, LabelSession, MemoryFrameSource, SourceGeometry, DEFAULT_PIXELS_PER_DEGREE};
use crate::masking::{FOCUS_RADIUS_DEG, FRAME_CENTER};
use crate::sampler::{ModelConfig, PAST_OFFSETS};
use crate::util::{derive_seed, write_file};
use crate::{Error, GazePoint, Result, FRAME_SIZE, NUM_ACTIONS};

pub const SOURCE_WIDTH: u32 = 160;
pub const SOURCE_HEIGHT: u32 = 210;
pub const DEFAULT_ARITY: usize = 4;
/// Shortest episode that still admits past windows.
pub const MIN_EPISODE_LENGTH: usize = 60;
/// Glyphs are drawn wholly outside this radius in periphery recordings.
pub const PERIPHERY_CLEAR_DEG: f64 = 8.0;
/// Flash cycle of memory recordings: a flash of `MEMORY_FLASH` frames every
/// `MEMORY_PERIOD` frames.
pub const MEMORY_PERIOD: usize = 45;
pub const MEMORY_FLASH: usize = 15;

const CELL: f64 = 5.0;
const BACKGROUND_BLOCKS: usize = 6;
const BACKGROUND_LEVELS: (f64, f64) = (0.05, 0.65);
const NOISE_SIGMA: f64 = 0.01;
const GLYPH_LEVEL: f64 = 1.0;
/// Glyph centers stay this far inside the frame.
const EDGE: f64 = 8.0;
/// Gaze samples stay this far inside the frame.
const GAZE_EDGE: f64 = 8.0;
/// Gaze-quadrant recordings keep gaze this far from the center lines.
const QUADRANT_MARGIN: f64 = 4.0;
/// Slack for resampling blur when keeping glyphs inside or outside a disc.
const BLUR_SLACK: f64 = 1.5;

/// 3 × 3 glyph masks, row-major. The first four are the bars, the square and
/// the ring.
const GLYPHS: [[u8; 9]; NUM_ACTIONS] = [
    [0, 0, 0, 1, 1, 1, 0, 0, 0],
    [0, 1, 0, 0, 1, 0, 0, 1, 0],
    [1, 1, 1, 1, 1, 1, 1, 1, 1],
    [1, 1, 1, 1, 0, 1, 1, 1, 1],
    [1, 0, 1, 0, 1, 0, 1, 0, 1],
    [0, 1, 0, 1, 1, 1, 0, 1, 0],
    [1, 0, 0, 0, 1, 0, 0, 0, 1],
    [0, 0, 1, 0, 1, 0, 1, 0, 0],
    [1, 1, 1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 1, 1, 1],
    [1, 0, 0, 1, 0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0, 1, 0, 0, 1],
    [1, 1, 0, 1, 1, 0, 0, 0, 0],
    [0, 1, 1, 0, 1, 1, 0, 0, 0],
    [0, 0, 0, 1, 1, 0, 1, 1, 0],
    [0, 0, 0, 0, 1, 1, 0, 1, 1],
    [1, 1, 1, 1, 0, 0, 1, 0, 0],
    [0, 0, 1, 0, 0, 1, 1, 1, 1],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyntheticPolicyKind {
    /// Action = glyph drawn near gaze.
    Focus,
    /// Action = glyph drawn far from gaze.
    Periphery,
    /// Action = glyph flashed near gaze 15, 30 or 45 frames earlier.
    Memory,
    /// Action = quadrant of the gaze point.
    GazeLoc,
    /// Uniformly random actions.
    Noise,
}

impl SyntheticPolicyKind {
    pub const ALL: [Self; 5] = [Self::Focus, Self::Periphery, Self::Memory, Self::GazeLoc, Self::Noise];

    pub fn name(self) -> &'static str {
        match self {
            Self::Focus => "FOCUS",
            Self::Periphery => "PERIPHERY",
            Self::Memory => "MEMORY",
            Self::GazeLoc => "GAZE_LOC",
            Self::Noise => "NOISE",
        }
    }
}

impl fmt::Display for SyntheticPolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticPolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown synthetic policy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedAccuracy {
    High,
    Chance,
}

/// Accuracy class a configuration can reach on a recording of `kind`.
pub fn theoretical_accuracy(kind: SyntheticPolicyKind, config: ModelConfig) -> ExpectedAccuracy {
    use ExpectedAccuracy::*;
    let high = match kind {
        SyntheticPolicyKind::Focus => true,
        SyntheticPolicyKind::Periphery => config.periphery(),
        SyntheticPolicyKind::Memory => config.past(),
        SyntheticPolicyKind::GazeLoc => config.gaze() || !config.periphery(),
        SyntheticPolicyKind::Noise => false,
    };
    if high {
        High
    } else {
        Chance
    }
}

/// Ground truth kept alongside a generated episode, in 84 × 84 coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub gaze: GazePoint,
    /// Center and class of the glyph drawn in this frame.
    pub glyph: Option<([f64; 2], u8)>,
}

#[derive(Debug, Clone)]
pub struct SyntheticEpisode {
    pub kind: SyntheticPolicyKind,
    pub labels: Vec<FrameLabel>,
    pub frames: Vec<GrayImage>,
    /// Noise-free background in source pixels, `[0,1]`.
    pub background: Vec<f32>,
    pub truth: Vec<FrameTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticRecording {
    pub kind: SyntheticPolicyKind,
    pub seed: u64,
    pub subject_id: String,
    pub episodes: Vec<SyntheticEpisode>,
}

pub fn source_geometry() -> SourceGeometry {
    SourceGeometry {
        width: SOURCE_WIDTH,
        height: SOURCE_HEIGHT,
        pixels_per_degree: DEFAULT_PIXELS_PER_DEGREE,
    }
}

/// Half-diagonal of a glyph.
fn glyph_radius() -> f64 {
    1.5 * CELL * std::f64::consts::SQRT_2
}

/// Largest glyph-center distance from gaze that keeps the glyph inside the
/// focus disc.
pub fn focus_max_distance() -> f64 {
    FOCUS_RADIUS_DEG * DEFAULT_PIXELS_PER_DEGREE - glyph_radius() - BLUR_SLACK
}

/// Smallest glyph-center distance from gaze that keeps the glyph outside
/// the periphery clearance disc.
pub fn periphery_min_distance() -> f64 {
    PERIPHERY_CLEAR_DEG * DEFAULT_PIXELS_PER_DEGREE + glyph_radius() + BLUR_SLACK
}

fn dist(a: [f64; 2], b: GazePoint) -> f64 {
    ((a[0] - b[0] as f64).powi(2) + (a[1] - b[1] as f64).powi(2)).sqrt()
}

fn sample_gaze(rng: &mut ChaCha8Rng, kind: SyntheticPolicyKind) -> GazePoint {
    let hi = FRAME_SIZE as f64 - 1.0 - GAZE_EDGE;
    loop {
        let p = [rng.random_range(GAZE_EDGE..hi), rng.random_range(GAZE_EDGE..hi)];
        let near_line = p
            .iter()
            .any(|&v| (v - FRAME_CENTER[0] as f64).abs() < QUADRANT_MARGIN);
        if kind != SyntheticPolicyKind::GazeLoc || !near_line {
            return [p[0] as f32, p[1] as f32];
        }
    }
}

fn sample_glyph_center(rng: &mut ChaCha8Rng, gaze: GazePoint, near: bool) -> [f64; 2] {
    let hi = FRAME_SIZE as f64 - 1.0 - EDGE;
    loop {
        let c = if near {
            let r = focus_max_distance();
            [
                gaze[0] as f64 + rng.random_range(-r..r),
                gaze[1] as f64 + rng.random_range(-r..r),
            ]
        } else {
            [rng.random_range(EDGE..hi), rng.random_range(EDGE..hi)]
        };
        if !(EDGE..=hi).contains(&c[0]) || !(EDGE..=hi).contains(&c[1]) {
            continue;
        }
        let d = dist(c, gaze);
        if (near && d < focus_max_distance()) || (!near && d >= periphery_min_distance()) {
            return c;
        }
    }
}

/// Quadrant of a gaze point: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
pub fn gaze_quadrant(p: GazePoint) -> u8 {
    let right = p[0] > FRAME_CENTER[0];
    let bottom = p[1] > FRAME_CENTER[1];
    (right as u8) + 2 * (bottom as u8)
}

/// Whether frame `t` of a memory episode shows a flash.
pub fn memory_flash(t: usize) -> bool {
    t % MEMORY_PERIOD < MEMORY_FLASH
}

/// The one past offset whose frame lies in a flash, if any exists yet.
pub fn memory_cue_offset(t: usize) -> Option<usize> {
    PAST_OFFSETS.into_iter().find(|&o| t >= o && memory_flash(t - o))
}

/// Maps a source pixel center to network coordinates.
fn to_design(sx: u32, sy: u32) -> [f64; 2] {
    [
        sx as f64 * FRAME_SIZE as f64 / SOURCE_WIDTH as f64,
        sy as f64 * FRAME_SIZE as f64 / SOURCE_HEIGHT as f64,
    ]
}

fn render_background(rng: &mut ChaCha8Rng) -> Vec<f32> {
    let levels: Vec<f64> = (0..BACKGROUND_BLOCKS * BACKGROUND_BLOCKS)
        .map(|_| rng.random_range(BACKGROUND_LEVELS.0..BACKGROUND_LEVELS.1))
        .collect();
    let block = FRAME_SIZE as f64 / BACKGROUND_BLOCKS as f64;
    let mut out = Vec::with_capacity((SOURCE_WIDTH * SOURCE_HEIGHT) as usize);
    for sy in 0..SOURCE_HEIGHT {
        for sx in 0..SOURCE_WIDTH {
            let [u, v] = to_design(sx, sy);
            let bx = ((u / block) as usize).min(BACKGROUND_BLOCKS - 1);
            let by = ((v / block) as usize).min(BACKGROUND_BLOCKS - 1);
            out.push(levels[by * BACKGROUND_BLOCKS + bx] as f32);
        }
    }
    out
}

fn glyph_covers(center: [f64; 2], class: u8, p: [f64; 2]) -> bool {
    let cx = (p[0] - center[0]) / CELL + 1.5;
    let cy = (p[1] - center[1]) / CELL + 1.5;
    if !(0.0..3.0).contains(&cx) || !(0.0..3.0).contains(&cy) {
        return false;
    }
    GLYPHS[class as usize][cy as usize * 3 + cx as usize] == 1
}

fn render_frame(background: &[f32], glyph: Option<([f64; 2], u8)>, rng: &mut ChaCha8Rng) -> GrayImage {
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut img = GrayImage::new(SOURCE_WIDTH, SOURCE_HEIGHT);
    for sy in 0..SOURCE_HEIGHT {
        for sx in 0..SOURCE_WIDTH {
            let i = (sy * SOURCE_WIDTH + sx) as usize;
            let mut v = background[i] as f64;
            if let Some((c, class)) = glyph {
                if glyph_covers(c, class, to_design(sx, sy)) {
                    v = GLYPH_LEVEL;
                }
            }
            v += noise.sample(rng);
            img.put_pixel(sx, sy, image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]));
        }
    }
    img
}

/// Generates one episode of `length` frames. Frame ids are
/// `e<episode>_<t>` and all labels carry `episode_id`.
pub fn generate_episode(
    kind: SyntheticPolicyKind,
    length: usize,
    action_arity: usize,
    seed: u64,
) -> Result<SyntheticEpisode> {
    generate_episode_with_id(kind, length, action_arity, seed, 0)
}

fn generate_episode_with_id(
    kind: SyntheticPolicyKind,
    length: usize,
    action_arity: usize,
    seed: u64,
    episode_id: u32,
) -> Result<SyntheticEpisode> {
    if action_arity == 0 || action_arity > NUM_ACTIONS {
        return Err(Error::InvalidArity(action_arity));
    }
    if kind == SyntheticPolicyKind::GazeLoc && action_arity != 4 {
        return Err(Error::InvalidArity(action_arity));
    }
    if length < MIN_EPISODE_LENGTH {
        return Err(Error::InvalidArgument(format!(
            "episode length {length} is below {MIN_EPISODE_LENGTH}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = render_background(&mut rng);
    let geometry = source_geometry();
    let arity = action_arity as u8;
    let mut truth: Vec<FrameTruth> = Vec::with_capacity(length);
    let mut labels = Vec::with_capacity(length);
    let mut frames = Vec::with_capacity(length);
    for t in 0..length {
        let gaze = sample_gaze(&mut rng, kind);
        let (glyph, action) = match kind {
            SyntheticPolicyKind::Focus | SyntheticPolicyKind::Periphery => {
                let class = rng.random_range(0..arity);
                let c = sample_glyph_center(&mut rng, gaze, kind == SyntheticPolicyKind::Focus);
                (Some((c, class)), class)
            }
            SyntheticPolicyKind::Memory => {
                let glyph = memory_flash(t).then(|| {
                    let class = rng.random_range(0..arity);
                    (sample_glyph_center(&mut rng, gaze, true), class)
                });
                let action = match memory_cue_offset(t) {
                    Some(o) => truth[t - o].glyph.expect("flash frame has a glyph").1,
                    None => rng.random_range(0..arity),
                };
                (glyph, action)
            }
            SyntheticPolicyKind::GazeLoc => (None, gaze_quadrant(gaze)),
            SyntheticPolicyKind::Noise => (None, rng.random_range(0..arity)),
        };
        frames.push(render_frame(&background, glyph, &mut rng));
        labels.push(FrameLabel {
            frame_id: format!("e{episode_id}_{t:06}"),
            episode_id,
            score: 0,
            duration_ms: 16.0,
            unclipped_reward: 0.0,
            action: Some(action),
            gaze_points: vec![geometry.rescale_inverse(gaze)],
        });
        truth.push(FrameTruth { gaze, glyph });
    }
    Ok(SyntheticEpisode {
        kind,
        labels,
        frames,
        background,
        truth,
    })
}

/// A one-session recording of `episodes` episodes.
pub fn generate_recording(
    kind: SyntheticPolicyKind,
    episodes: usize,
    length: usize,
    action_arity: usize,
    seed: u64,
) -> Result<SyntheticRecording> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("at least one episode is required".into()));
    }
    let episodes = (0..episodes)
        .map(|e| generate_episode_with_id(kind, length, action_arity, derive_seed(seed, e as u64), e as u32))
        .collect::<Result<_>>()?;
    Ok(SyntheticRecording {
        kind,
        seed,
        subject_id: "SYN".into(),
        episodes,
    })
}

impl SyntheticRecording {
    /// Label-file name following the `<trial>_<subject>_<rest>.txt` pattern.
    pub fn label_file_name(&self) -> String {
        format!("{}_{}_{}.txt", self.seed, self.subject_id, self.kind.name().to_ascii_lowercase())
    }

    pub fn labels(&self) -> impl Iterator<Item = &FrameLabel> {
        self.episodes.iter().flat_map(|e| e.labels.iter())
    }

    pub fn session(&self) -> LabelSession {
        LabelSession {
            source: self.label_file_name(),
            subject_id: Some(self.subject_id.clone()),
            labels: self.labels().cloned().collect(),
        }
    }

    pub fn frame_source(&self) -> MemoryFrameSource {
        let mut src = MemoryFrameSource::default();
        for e in &self.episodes {
            for (l, f) in e.labels.iter().zip(&e.frames) {
                src.frames.insert(l.frame_id.clone(), f.clone());
            }
        }
        src
    }

    pub fn label_text(&self) -> String {
        let mut out = String::from("frame_id,episode_id,score,duration(ms),unclipped_reward,action,gaze_positions\n");
        for l in self.labels() {
            out.push_str(&format_label_line(l));
            out.push('\n');
        }
        out
    }

    /// Writes `<dir>/frames/<frame_id>.png` and `<dir>/<label file>`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
        for e in &self.episodes {
            for (l, f) in e.labels.iter().zip(&e.frames) {
                let path = frames_dir.join(format!("{}.png", l.frame_id));
                f.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            }
        }
        write_file(&dir.join(self.label_file_name()), self.label_text().as_bytes())
    }
}
