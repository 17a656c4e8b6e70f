//! Controlled information-source ablation for gaze-conditioned action
//! prediction.
//!
//! The crate ingests gameplay recordings with synchronized eye tracking into a
//! replay store, trains six action-prediction networks that include or exclude
//! peripheral vision, explicit gaze maps and past states, and analyzes how
//! their accuracies and per-state true-action probabilities differ.
//!
//! Module map:
//!
//! - [`ingest`]: label parsing, the on-disk replay store, block split, baselines
//! - [`gazemaps`]: multi-scale Gaussian gaze maps
//! - [`masking`]: periphery removal around the gaze center
//! - [`sampler`]: model configurations A–F and input assembly
//! - [`nn`]: the branch network with hand-written backward pass
//! - [`training`]: AdamW schedule, accuracy and probability evaluation
//! - [`ablation`]: six-configuration study, rule checks, drop matrix
//! - [`clustering`]: response vectors, k-means, silhouette, exact t-SNE
//! - [`synth`]: scripted recordings whose information dependence is known

pub mod ablation;
pub mod clustering;
mod error;
pub mod gazemaps;
pub mod ingest;
pub mod masking;
pub mod nn;
pub mod sampler;
pub mod synth;
pub mod training;
mod util;

pub use util::derive_seed;

pub use error::{Error, Result};

/// Side length of the square network input frames.
pub const FRAME_SIZE: usize = 84;
/// Pixels in one network input frame.
pub const FRAME_PIXELS: usize = FRAME_SIZE * FRAME_SIZE;
/// Size of the discrete Atari action set.
pub const NUM_ACTIONS: usize = 18;

/// A gaze sample `(x, y)` in pixel coordinates, pixel centers at integers.
pub type GazePoint = [f32; 2];
