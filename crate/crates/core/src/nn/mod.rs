//! Action-prediction network with optional gaze and past-state branches.
//!
//! The network is generic over [`Real`] so the same code trains in `f32`
//! and is checked against finite differences in `f64`.

pub mod checkpoint;
mod encoder;
pub mod layers;
mod network;
mod real;

pub use encoder::{ConvStage, Encoder};
pub use network::{
    init_network, loss, softmax_rows, ForwardTrace, Inputs, Mode, Network, PastBranch, RunningStatUpdate,
    StateInputs, TensorList, Topology, STATE_FRAMES,
};
pub use real::Real;
