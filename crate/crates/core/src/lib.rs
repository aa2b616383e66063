//! Offline multi-agent reinforcement learning laboratory.
//!
//! The crate trains decentralized teams from fixed datasets of multi-agent
//! interactions. The main method learns an ensemble world model from the
//! dataset, branches short uncertainty-penalized rollouts from dataset
//! histories through it, and trains history-conditioned agents on those
//! rollouts with multi-agent PPO and a QMIX-mixed centralized value.
//! Model-free baselines (independent behavioral cloning, multi-agent IQL and
//! its centralized single-learner configuration) share the same networks.
//!
//! Module map:
//!
//! - [`nn`]: matrices, reverse-mode autodiff tape, layers, attention memory,
//!   Adam and a finite-difference gradient checker.
//! - [`envs`]: the iterated coordination game and a kinematic two-agent
//!   reacher, plus scripted data-collection policies.
//! - [`dataset`]: trajectories, the line-oriented dataset file, statistics,
//!   splits and history sampling.
//! - [`worldmodel`]: ensemble training, epistemic uncertainties and clipped
//!   single-step predictions.
//! - [`rollout`]: branched synthetic rollouts with penalties and timeouts.
//! - [`mappo`]: agents, mixed team value, timeout-aware GAE and PPO updates.
//! - [`baselines`]: behavioral cloning and multi-agent IQL.
//! - [`harness`]: configuration, training loops, evaluation and reports.

// Validation uses `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mappo;
pub mod nn;
pub mod parallel;
pub mod rollout;
pub mod worldmodel;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used everywhere in the crate.
pub type Rng = ChaCha8Rng;

/// Build a reproducible stream from a seed and a sub-stream index.
///
/// Independent workers (ensemble members, rollout branches, evaluation
/// episodes) each derive their own stream so results do not depend on
/// scheduling.
pub fn rng_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
