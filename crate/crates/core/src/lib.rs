//! Adaptive-bitrate streaming simulator with a from-scratch PPO agent,
//! per-neuron plasticity telemetry and silent-neuron resets.
//!
//! The crate is organized bottom-up:
//!
//! - [`trace`]: bandwidth traces, synthetic profiles and regime schedules.
//! - [`env`]: the chunk-level streaming MDP and its QoE reward.
//! - [`net`]: dense feed-forward networks with reverse-mode gradients and
//!   per-neuron activation / gradient tapes.
//! - [`plasticity`]: dormancy, gradient and activity indices, neuron sets and
//!   overlap coefficients.
//! - [`resin`]: periodic reset sweeps over silent (or dormant) neurons.
//! - [`agent`]: actor-critic PPO with GAE.
//! - [`harness`]: experiment configuration, seeded multi-run execution and
//!   CSV / JSON artifacts.

pub mod agent;
pub mod env;
mod error;
pub mod harness;
pub mod net;
pub mod plasticity;
pub mod resin;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
