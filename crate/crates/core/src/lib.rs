//! Numerical core for matched-budget self-model experiments.
//!
//! Everything here is `no_std` + `alloc` and deterministic: identical inputs
//! and seeds produce bitwise-identical outputs. Transcendental functions go
//! through `libm` so results do not depend on the platform's C library.
//!
//! - [`nn`]: dense networks, reverse-mode gradients, Adam.
//! - [`env`]: the planar crawler family and its penalty-contact physics.
//! - [`self_model`]: random-motion data collection, forward-model fitting and
//!   open-loop model rollouts.
//! - [`ppo`]: a Gaussian-policy PPO agent trainable on any [`ppo::Environment`].
//! - [`harness`]: experiment cells, percent improvement and the DoF regression.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod ppo;
pub mod rng;
pub mod self_model;

pub use error::{Error, Result};
