//! Model configurations and input assembly.
//!
//! A state is the frame pair (t−1, t). Configurations without periphery see
//! every frame masked around its own gaze center; configurations with gaze
//! also get the four gaze maps of each state; configurations with past states
//! get the states 15, 30 and 45 frames earlier, assembled the same way.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::gazemaps::{build_gaze_stack_into, GazeMapCache, GAZE_CHANNELS};
use crate::ingest::{ReplayStore, SplitAssignment, SplitLabel};
use crate::masking::{mask_periphery_into, select_gaze_center, FocusRegion};
use crate::nn::{Inputs, StateInputs, STATE_FRAMES};
use crate::{Error, GazePoint, Result, FRAME_PIXELS};

/// Spacing between past states, in frames.
pub const PAST_STRIDE: usize = 15;
/// Number of past states per sample.
pub const PAST_STATES: usize = 3;
/// Frame offsets of the past states, nearest first.
pub const PAST_OFFSETS: [usize; PAST_STATES] = [PAST_STRIDE, 2 * PAST_STRIDE, 3 * PAST_STRIDE];
pub const DEFAULT_BATCH_SIZE: usize = 64;

/// Which information sources a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelConfig {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl ModelConfig {
    pub const ALL: [ModelConfig; 6] = [Self::A, Self::B, Self::C, Self::D, Self::E, Self::F];

    /// `(periphery, gaze, past)`.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Self::A => (true, true, true),
            Self::B => (true, true, false),
            Self::C => (true, false, true),
            Self::D => (true, false, false),
            Self::E => (false, true, true),
            Self::F => (false, true, false),
        }
    }

    /// Inverse of [`flags`](Self::flags). Removing both periphery and gaze
    /// has no configuration.
    pub fn from_flags(periphery: bool, gaze: bool, past: bool) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.flags() == (periphery, gaze, past))
    }

    pub fn periphery(self) -> bool {
        self.flags().0
    }

    pub fn gaze(self) -> bool {
        self.flags().1
    }

    pub fn past(self) -> bool {
        self.flags().2
    }

    pub fn letter(self) -> char {
        (b'A' + self.index() as u8) as char
    }

    /// Position in [`ALL`](Self::ALL).
    pub fn index(self) -> usize {
        self as usize
    }

    /// Parses a comma-separated list such as `A,C,F`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let c: Self = tok.parse()?;
            if !out.contains(&c) {
                out.push(c);
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("empty configuration list".into()));
        }
        out.sort();
        Ok(out)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            "E" => Ok(Self::E),
            "F" => Ok(Self::F),
            other => Err(Error::InvalidArgument(format!("unknown model configuration {other:?}"))),
        }
    }
}

impl Serialize for ModelConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ModelConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One assembled model input.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub index: usize,
    /// `2 × 84 × 84`, frames t−1 then t.
    pub current: Vec<f32>,
    /// `4 × 84 × 84` when the config uses gaze.
    pub gaze_stack: Option<Vec<f32>>,
    /// States at −15, −30, −45 when the config uses past states; these carry
    /// no further past.
    pub past: Option<Vec<StateSample>>,
    pub action: u8,
}

/// Read-only view of a store prepared for input assembly.
#[derive(Debug, Clone)]
pub struct SamplerContext<'a> {
    store: &'a ReplayStore,
    mean_frame: Vec<f32>,
    pixels_per_degree: f64,
    gaze_cache: Option<&'a GazeMapCache>,
    centers: Vec<GazePoint>,
    radius_px: f64,
}

impl<'a> SamplerContext<'a> {
    /// `mean_frame` replaces masked pixels; pass the train-split mean.
    pub fn new(store: &'a ReplayStore, mean_frame: Vec<f32>, pixels_per_degree: f64) -> Result<Self> {
        if mean_frame.len() != FRAME_PIXELS {
            return Err(Error::ShapeMismatch(format!(
                "mean frame has {} values, expected {FRAME_PIXELS}",
                mean_frame.len()
            )));
        }
        let radius_px = FocusRegion::around([0.0, 0.0], pixels_per_degree)?.radius_px;
        let mut centers = Vec::with_capacity(store.len());
        let mut prev: Option<GazePoint> = None;
        for i in 0..store.len() {
            if i > 0 && store.session_id(i) != store.session_id(i - 1) {
                prev = None;
            }
            let c = select_gaze_center(store.gaze(i), prev);
            centers.push(c);
            prev = Some(c);
        }
        Ok(Self {
            store,
            mean_frame,
            pixels_per_degree,
            gaze_cache: None,
            centers,
            radius_px,
        })
    }

    /// Serves gaze maps from a precomputed cache instead of rendering them.
    pub fn with_gaze_cache(mut self, cache: &'a GazeMapCache) -> Result<Self> {
        if cache.num_states() != self.store.len() || cache.pixels_per_degree != self.pixels_per_degree {
            return Err(Error::InvalidArgument("gaze cache does not match the store".into()));
        }
        self.gaze_cache = Some(cache);
        Ok(self)
    }

    pub fn store(&self) -> &'a ReplayStore {
        self.store
    }

    pub fn mean_frame(&self) -> &[f32] {
        &self.mean_frame
    }

    pub fn pixels_per_degree(&self) -> f64 {
        self.pixels_per_degree
    }

    /// Masking center of state `i`.
    pub fn center(&self, i: usize) -> GazePoint {
        self.centers[i]
    }

    pub fn focus_region(&self, i: usize) -> FocusRegion {
        FocusRegion {
            center: self.centers[i],
            radius_px: self.radius_px,
        }
    }

    /// Checks that state `index` and its past window stay inside one episode
    /// of one session.
    pub fn check_window(&self, index: usize, config: ModelConfig) -> Result<()> {
        if index >= self.store.len() {
            return Err(Error::InvalidWindow {
                index,
                reason: format!("store has {} states", self.store.len()),
            });
        }
        if config.past() {
            let start = self.store.episode_start(index);
            let need = PAST_OFFSETS[PAST_STATES - 1];
            if index < start + need {
                return Err(Error::InvalidWindow {
                    index,
                    reason: format!("past window needs {need} earlier states in the episode starting at {start}"),
                });
            }
        }
        Ok(())
    }

    pub fn is_valid(&self, index: usize, config: ModelConfig) -> bool {
        self.check_window(index, config).is_ok()
    }

    /// Valid indices for `config`, restricted to `label` when a split is given.
    pub fn valid_indices(&self, config: ModelConfig, split: Option<(&SplitAssignment, SplitLabel)>) -> Result<Vec<usize>> {
        if let Some((s, _)) = split {
            s.check_covers(self.store)?;
        }
        Ok((0..self.store.len())
            .filter(|&i| split.is_none_or(|(s, l)| s.label(i) == l))
            .filter(|&i| self.is_valid(i, config))
            .collect())
    }

    fn predecessor(&self, i: usize) -> usize {
        if i == self.store.episode_start(i) {
            i
        } else {
            i - 1
        }
    }

    /// Writes the `2 × 84 × 84` stack and, when `gaze` is given, the gaze maps.
    fn fill_state(&self, i: usize, periphery: bool, frames: &mut [f32], gaze: Option<&mut [f32]>) -> Result<()> {
        let (prev_out, cur_out) = frames.split_at_mut(FRAME_PIXELS);
        for (j, out) in [(self.predecessor(i), prev_out), (i, cur_out)] {
            if periphery {
                self.store.frame_into(j, out);
            } else {
                let raw = self.store.frame(j);
                mask_periphery_into(&raw, &self.focus_region(j), &self.mean_frame, out)?;
            }
        }
        if let Some(g) = gaze {
            match self.gaze_cache {
                Some(cache) => g.copy_from_slice(cache.stack(i)),
                None => build_gaze_stack_into(self.store.gaze(i), self.pixels_per_degree, g)?,
            }
        }
        Ok(())
    }

    fn state_only(&self, i: usize, config: ModelConfig) -> Result<StateSample> {
        let mut current = vec![0.0; STATE_FRAMES * FRAME_PIXELS];
        let mut gaze_stack = config.gaze().then(|| vec![0.0; GAZE_CHANNELS * FRAME_PIXELS]);
        self.fill_state(i, config.periphery(), &mut current, gaze_stack.as_deref_mut())?;
        Ok(StateSample {
            index: i,
            current,
            gaze_stack,
            past: None,
            action: self.store.action(i),
        })
    }

    pub fn assemble_state(&self, index: usize, config: ModelConfig) -> Result<StateSample> {
        self.check_window(index, config)?;
        let mut s = self.state_only(index, config)?;
        if config.past() {
            s.past = Some(
                PAST_OFFSETS
                    .iter()
                    .map(|&o| self.state_only(index - o, config))
                    .collect::<Result<_>>()?,
            );
        }
        Ok(s)
    }

    /// Assembles network inputs and demonstrated actions for `indices`.
    pub fn assemble_batch(&self, indices: &[usize], config: ModelConfig) -> Result<(Inputs<f32>, Vec<u8>)> {
        let n = indices.len();
        let alloc = || StateInputs {
            frames: vec![0.0; n * STATE_FRAMES * FRAME_PIXELS],
            gaze: config.gaze().then(|| vec![0.0; n * GAZE_CHANNELS * FRAME_PIXELS]),
        };
        let mut current = alloc();
        let mut past: Vec<StateInputs<f32>> = if config.past() {
            (0..PAST_STATES).map(|_| alloc()).collect()
        } else {
            Vec::new()
        };
        let fs = STATE_FRAMES * FRAME_PIXELS;
        let gs = GAZE_CHANNELS * FRAME_PIXELS;
        let fill = |dst: &mut StateInputs<f32>, k: usize, i: usize| {
            let g = dst.gaze.as_mut().map(|g| &mut g[k * gs..(k + 1) * gs]);
            self.fill_state(i, config.periphery(), &mut dst.frames[k * fs..(k + 1) * fs], g)
        };
        let mut actions = Vec::with_capacity(n);
        for (k, &i) in indices.iter().enumerate() {
            self.check_window(i, config)?;
            fill(&mut current, k, i)?;
            for (dst, &o) in past.iter_mut().zip(&PAST_OFFSETS) {
                fill(dst, k, i - o)?;
            }
            actions.push(self.store.action(i));
        }
        Ok((Inputs { n, current, past }, actions))
    }

    /// Draws `batch_size` samples uniformly with replacement from the valid
    /// states of `label`.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        split: &SplitAssignment,
        label: SplitLabel,
        config: ModelConfig,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<StateSample>> {
        let valid = self.valid_indices(config, Some((split, label)))?;
        let idx = sample_indices(&valid, batch_size, rng)?;
        idx.into_iter().map(|i| self.assemble_state(i, config)).collect()
    }
}

/// Uniform draws with replacement from `valid`.
pub fn sample_indices<R: Rng + ?Sized>(valid: &[usize], batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if valid.is_empty() {
        return Err(Error::NoValidStates("no valid states for this configuration and split".into()));
    }
    Ok((0..batch_size).map(|_| valid[rng.random_range(0..valid.len())]).collect())
}

/// Converts assembled samples into network inputs.
pub fn samples_to_inputs(samples: &[StateSample]) -> Inputs<f32> {
    let n = samples.len();
    let gather = |get: &dyn Fn(&StateSample) -> &StateSample| StateInputs {
        frames: samples.iter().flat_map(|s| get(s).current.iter().copied()).collect(),
        gaze: samples
            .first()
            .is_some_and(|s| get(s).gaze_stack.is_some())
            .then(|| samples.iter().flat_map(|s| get(s).gaze_stack.as_ref().unwrap().iter().copied()).collect()),
    };
    let current = gather(&|s| s);
    let n_past = samples.first().and_then(|s| s.past.as_ref()).map_or(0, Vec::len);
    let past = (0..n_past)
        .map(|k| gather(&|s: &StateSample| &s.past.as_ref().unwrap()[k]))
        .collect();
    Inputs { n, current, past }
}
