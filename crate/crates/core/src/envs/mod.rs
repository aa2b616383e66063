//! Ground-truth simulators and scripted behaviour policies.
//!
//! Environments are value-semantic: [`Env::step`] maps a state and a joint
//! action to a fresh [`StepResult`] and never mutates shared data, so
//! episodes can run concurrently with their own random streams.

mod coordination;
mod policy;
mod reacher;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Rng};

pub use coordination::{project_one_hot as project_one_hot_state, CoordinationGame, COORD_STATE_DIM};
pub use policy::{ScriptedPolicy, TeamPolicy};
pub use reacher::{
    angles as reacher_angles, fingertip, inverse_kinematics, Reacher, ReacherObs, LINK1, LINK2, REACHER_STATE_DIM,
    TARGET_R_MAX, TARGET_R_MIN,
};

/// Per-agent action space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    /// `n` choices, carried as a single value holding the index.
    Discrete(usize),
    /// `dim` real values, nominally in `[-1, 1]`.
    Continuous(usize),
}

impl ActionSpace {
    /// Length of the stored action vector.
    pub fn dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous(d) => d,
        }
    }

    /// Length of the network-facing encoding (one-hot for discrete).
    pub fn encoded_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Continuous(d) => d,
        }
    }

    pub fn encode(&self, action: &[f64], out: &mut Vec<f64>) {
        match *self {
            ActionSpace::Discrete(n) => {
                let k = action[0] as usize;
                out.extend((0..n).map(|i| if i == k { 1.0 } else { 0.0 }));
            }
            ActionSpace::Continuous(_) => out.extend_from_slice(action),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }
}

/// Static description of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: String,
    pub n_agents: usize,
    pub state_dim: usize,
    pub obs_dims: Vec<usize>,
    pub action_spaces: Vec<ActionSpace>,
    pub horizon: usize,
}

/// Global state plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub s: Vec<f64>,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: EnvState,
    pub obs: Vec<Vec<f64>>,
    pub reward: f64,
    /// Absorbing state reached. Neither built-in task has one.
    pub done: bool,
    /// Horizon reached.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Env {
    Coordination(CoordinationGame),
    Reacher(Reacher),
}

impl Env {
    /// Build from an id such as `coordgame-v0` or `reacher2-v0-leader`.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "coordgame-v0" => Ok(Env::Coordination(CoordinationGame::default())),
            _ => match id.strip_prefix("reacher2-v0-") {
                Some(mode) => Ok(Env::Reacher(Reacher::new(ReacherObs::from_suffix(mode)?))),
                None => Err(Error::config(format!("unknown environment id {id:?}"))),
            },
        }
    }

    pub fn id(&self) -> String {
        match self {
            Env::Coordination(_) => "coordgame-v0".into(),
            Env::Reacher(r) => format!("reacher2-v0-{}", r.obs.suffix()),
        }
    }

    /// Observation mode tag stored in dataset headers.
    pub fn obs_mode(&self) -> &'static str {
        match self {
            Env::Coordination(_) => "full",
            Env::Reacher(r) => r.obs.suffix(),
        }
    }

    pub fn spec(&self) -> EnvSpec {
        match self {
            Env::Coordination(c) => c.spec(),
            Env::Reacher(r) => r.spec(),
        }
    }

    pub fn reset(&self, rng: &mut Rng) -> (EnvState, Vec<Vec<f64>>) {
        let state = match self {
            Env::Coordination(_) => CoordinationGame::reset(),
            Env::Reacher(r) => r.reset(rng),
        };
        let obs = self.observe(&state.s);
        (state, obs)
    }

    pub fn step(&self, state: &EnvState, action: &[Vec<f64>]) -> Result<StepResult> {
        let spec = self.spec();
        if state.t >= spec.horizon {
            return Err(Error::input("episode already finished"));
        }
        if action.len() != spec.n_agents {
            return Err(Error::input(format!(
                "expected {} agent actions, got {}",
                spec.n_agents,
                action.len()
            )));
        }
        let (s, reward) = match self {
            Env::Coordination(c) => c.transition(action)?,
            Env::Reacher(r) => r.transition(&state.s, action)?,
        };
        let next = EnvState { s, t: state.t + 1 };
        let obs = self.observe(&next.s);
        Ok(StepResult {
            truncated: next.t >= spec.horizon,
            state: next,
            obs,
            reward,
            done: false,
        })
    }

    /// Per-agent observations of a global state vector.
    pub fn observe(&self, s: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Env::Coordination(_) => CoordinationGame::observe(s),
            Env::Reacher(r) => r.observe(s),
        }
    }

    /// Map a model-predicted state back onto the valid state set where the
    /// task has a discrete one.
    pub fn project_state(&self, s: &mut [f64]) {
        if let Env::Coordination(_) = self {
            project_one_hot_state(s);
        }
    }

    /// Episode score from the per-step rewards: mean reward for the
    /// coordination game, undiscounted return for the reacher.
    pub fn episode_score(&self, rewards: &[f64]) -> f64 {
        match self {
            Env::Coordination(_) => {
                if rewards.is_empty() {
                    0.0
                } else {
                    rewards.iter().sum::<f64>() / rewards.len() as f64
                }
            }
            Env::Reacher(_) => rewards.iter().sum(),
        }
    }

    pub fn has_discrete_state(&self) -> bool {
        matches!(self, Env::Coordination(_))
    }
}
