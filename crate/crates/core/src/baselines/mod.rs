//! Model-free offline baselines on the same agent networks.
//!
//! Independent behavioral cloning fits each agent's policy to its own
//! dataset actions. Multi-agent IQL learns mixed twin `Q` and mixed `V`
//! networks by SARSA-style Bellman regression and expectile regression,
//! then extracts policies by factorized advantage-weighted regression.
//! Centralized IQL is the same learner with one agent over joint
//! observations and joint actions.

mod data;
mod ibc;
mod maiql;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use data::{joint_action, joint_spec, sample_batch, split_joint_action, AgentView, DatasetBatch};
pub use ibc::{ibc_loss, ibc_train, IbcTrainer};
pub use maiql::{
    agent_features, awr_loss, awr_weight, expectile_loss, expectile_value_loss, maiql_train, polyak_update, q_loss, Maiql,
    MaiqlReport, QNet, VNet,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    /// Learning rate of the policy, `Q` and `V` heads.
    pub lr: f64,
    /// Learning rate of the history memories.
    pub memory_lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub expectile: f64,
    /// AWR temperature `β`.
    pub beta: f64,
    /// Polyak coefficient `τ`.
    pub tau: f64,
    pub twin_q: bool,
    /// Upper clamp of the advantage weight.
    pub weight_clamp: f64,
    pub max_grad_norm: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            memory_lr: 1e-4,
            batch_size: 256,
            gamma: 0.99,
            expectile: 0.7,
            beta: 3.0,
            tau: 0.005,
            twin_q: true,
            weight_clamp: 100.0,
            max_grad_norm: 1.0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.memory_lr > 0.0) || self.batch_size == 0 || !(self.weight_clamp > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::config("baseline lr, batch size, clamp and grad norm must be positive"));
        }
        if !(self.expectile > 0.0 && self.expectile < 1.0) {
            return Err(Error::config("expectile must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.gamma) || self.beta < 0.0 {
            return Err(Error::config("tau and gamma must lie in [0, 1] and beta must be non-negative"));
        }
        Ok(())
    }
}
