//! Counterfactual physics laboratory.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`]: exact, deterministic 2D rigid-ball simulator (the ground-truth
//!   outcome function used everywhere else).
//! * [`bench`]: counterfactual experiment generation with identifiability and
//!   counterfactuality rejection tests and confounder balancing.
//! * [`render`]: frame rasterization, Gaussian keypoint maps, the oriented
//!   filter bank and background-subtraction masks.
//! * [`nn`]: a small reverse-mode autodiff engine with the layers the models
//!   need (dense, conv, GRU, graph network, soft-argmax, Adam).
//! * [`derender`]: keypoint + coefficient autoencoder.
//! * [`cody`]: counterfactual dynamics model over keypoint states.
//! * [`eval`]: PSNR / L-PSNR / MOT metrics, copy baselines and studies.
//! * [`cli`]: run configuration and the subcommand implementations behind the
//!   `cfphys` binary.

pub mod bench;
pub mod cli;
pub mod cody;
pub mod derender;
pub mod error;
pub mod eval;
pub mod nn;
pub mod render;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
