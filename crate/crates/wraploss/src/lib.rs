//! Wrapped-loss training for small dense networks.
//!
//! A wrapped loss attaches a learnable positive weight `o_i` to each output's
//! loss `l_i` and regularizes with `log(1/o_i)`, so the weights settle near the
//! inverse per-output loss (an inverse residual-variance estimate) instead of
//! collapsing to zero. This crate provides the loss family, a from-scratch
//! dense network with exact gradients, the training loop with selectable
//! weight-update strategies, synthetic data generators, verifiers for the
//! approximation bound and the expected-loss estimate, and a config-driven
//! experiment CLI.

pub mod analysis;
pub mod config;
pub mod core_nn;
pub mod datagen;
pub mod error;
pub mod losses;
pub mod runner;
pub mod trainer;

pub use error::{Error, Result};
