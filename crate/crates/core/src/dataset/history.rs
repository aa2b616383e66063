use std::collections::VecDeque;

use rand::Rng as _;

use super::OfflineDataset;
use crate::envs::ActionSpace;
use crate::Rng;

/// Default history length.
pub const HISTORY_WINDOW: usize = 10;

/// Sliding window of one agent's observation-action tokens.
///
/// Token `k` is `[o_k, enc(a_{k−1}), first]`: the observation at step `k`,
/// the encoded action taken just before it (zeros at the start of an
/// episode) and a flag that is 1 only for the episode's first step.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentHistory {
    window: usize,
    obs_dim: usize,
    space: ActionSpace,
    tokens: VecDeque<Vec<f64>>,
}

impl AgentHistory {
    pub fn new(window: usize, obs_dim: usize, space: ActionSpace) -> Self {
        Self {
            window,
            obs_dim,
            space,
            tokens: VecDeque::with_capacity(window),
        }
    }

    pub fn token_dim(obs_dim: usize, space: ActionSpace) -> usize {
        obs_dim + space.encoded_dim() + 1
    }

    /// Append the token for observation `obs` reached after `prev_action`
    /// (`None` at an episode start).
    pub fn push(&mut self, obs: &[f64], prev_action: Option<&[f64]>) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        let mut tok = Vec::with_capacity(Self::token_dim(self.obs_dim, self.space));
        tok.extend_from_slice(obs);
        match prev_action {
            Some(a) => {
                self.space.encode(a, &mut tok);
                tok.push(0.0);
            }
            None => {
                tok.extend(std::iter::repeat_n(0.0, self.space.encoded_dim()));
                tok.push(1.0);
            }
        }
        if self.tokens.len() == self.window {
            self.tokens.pop_front();
        }
        self.tokens.push_back(tok);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens oldest first, concatenated.
    pub fn flat(&self) -> Vec<f64> {
        self.tokens.iter().flatten().copied().collect()
    }
}

/// Per-agent windows ending at dataset step `t` of trajectory `traj`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistorySample {
    pub traj: usize,
    pub t: usize,
    pub state: Vec<f64>,
    pub histories: Vec<AgentHistory>,
}

impl OfflineDataset {
    pub fn action_spaces(&self) -> Vec<ActionSpace> {
        self.env().map(|e| e.spec().action_spaces).unwrap_or_default()
    }

    /// Histories at a given step.
    pub fn history_at(&self, traj: usize, t: usize, window: usize) -> HistorySample {
        let tr = &self.trajectories[traj];
        let spaces = self.action_spaces();
        let start = (t + 1).saturating_sub(window);
        let histories = (0..self.meta.n_agents)
            .map(|i| {
                let mut h = AgentHistory::new(window, self.meta.obs_dims[i], spaces[i]);
                for k in start..=t {
                    let prev = (k > 0).then(|| tr.steps[k - 1].action[i].as_slice());
                    h.push(&tr.steps[k].obs[i], prev);
                }
                h
            })
            .collect();
        HistorySample {
            traj,
            t,
            state: tr.steps[t].state.clone(),
            histories,
        }
    }

    /// Map a flat step index to `(trajectory, step)`.
    pub fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, tr) in self.trajectories.iter().enumerate() {
            if k < tr.len() {
                return (i, k);
            }
            k -= tr.len();
        }
        panic!("step index out of range");
    }
}

/// Uniform draw over all recorded `(trajectory, step)` pairs.
pub fn sample_history(ds: &OfflineDataset, window: usize, rng: &mut Rng) -> HistorySample {
    let k = rng.random_range(0..ds.n_steps());
    let (traj, t) = ds.locate(k);
    ds.history_at(traj, t, window)
}
