//! Multi-agent PPO on synthetic rollouts.
//!
//! Agents act on their own observation-action histories; a centralized
//! value mixes per-agent values with state-conditioned non-negative weights.
//! Returns and advantages respect both model-predicted absorbing states and
//! rollout timeouts.

mod agent;
mod checkpoint;
mod gae;
mod loss;
mod update;

use serde::{Deserialize, Serialize};

use crate::envs::Env;
use crate::{Error, Result};

pub use agent::{
    greedy_action, head_width, qmix_value, ActOutput, ActionDist, AgentPolicy, Mixer, NetConfig, Team, TeamParams,
    TeamValue,
};
pub use checkpoint::{load_team, save_team, team_from_text, team_to_text};
pub use gae::gae_with_timeouts;
pub use loss::{
    action_penalty, action_range_error, clipped_surrogate, entropy_bonus, entropy_estimate, ppo_loss, LossParts,
    Minibatch,
};
pub use update::{ppo_update, PpoLearner, UpdateReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub epochs: usize,
    /// Synthetic transitions collected between updates.
    pub transitions_per_update: usize,
    pub batch_size: usize,
    /// Actor and critic learning rate.
    pub lr: f64,
    pub memory_lr: f64,
    pub critic_coef: f64,
    /// Step size of the entropy multiplier.
    pub entropy_coef: f64,
    pub entropy_target: f64,
    pub action_penalty_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gae_lambda: 0.98,
            gamma: 0.99,
            epochs: 5,
            transitions_per_update: 2000,
            batch_size: 256,
            lr: 5e-5,
            memory_lr: 1e-4,
            critic_coef: 0.5,
            entropy_coef: 0.001,
            entropy_target: -4.0,
            action_penalty_coef: 1.0,
            max_grad_norm: 1.0,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    /// Defaults with the entropy target chosen by action type.
    pub fn for_env(env: &Env) -> Self {
        let discrete = env.spec().action_spaces.iter().all(|a| a.is_discrete());
        Self {
            entropy_target: if discrete { 0.3 } else { -4.0 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.clip, self.gamma, self.lr, self.memory_lr, self.max_grad_norm];
        if positive.iter().any(|x| !(*x > 0.0)) || self.epochs == 0 || self.batch_size == 0 || self.transitions_per_update == 0 {
            return Err(Error::config("PPO rates, counts and clip must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || self.gamma > 1.0 {
            return Err(Error::config("gamma and lambda must lie in [0, 1]"));
        }
        if self.critic_coef < 0.0 || self.entropy_coef < 0.0 || self.action_penalty_coef < 0.0 {
            return Err(Error::config("loss coefficients must be non-negative"));
        }
        Ok(())
    }
}
