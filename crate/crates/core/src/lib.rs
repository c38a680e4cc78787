//! Inference of stochastic particle dynamics from ensemble snapshots.
//!
//! The library simulates particle ensembles (Brownian/Lévy SODEs and
//! nonlocal flocking) and infers the governing dynamics back from snapshot
//! data by training a physics-informed generative model against transport
//! distances (sliced Wasserstein-2, WGAN-GP) plus a Newton-consistency loss
//! for interacting systems.

pub mod buffer;
pub mod dataset;
pub mod error;
pub mod flock;
pub mod harness;
pub mod losses;
pub mod model;
pub mod nn;
pub mod presets;
pub mod rng;
pub mod sim;
pub mod stable;
pub mod tape;

pub use buffer::Buffer;
pub use tape::{concat, directional_derivative, input_gradient, Gradients, Tape, Tensor};
