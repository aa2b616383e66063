use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{AgentHistory, OfflineDataset};
use crate::envs::{ActionSpace, EnvSpec};
use crate::nn::HistoryBatch;
use crate::{Error, Result, Rng};

/// How dataset steps are presented to a learner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentView {
    /// One learner per agent on its own observations.
    Decentralized,
    /// A single learner on concatenated observations and joint actions.
    Joint,
}

/// Single-agent spec over joint observations and actions.
pub fn joint_spec(spec: &EnvSpec) -> Result<EnvSpec> {
    let space = if spec.action_spaces.iter().all(ActionSpace::is_discrete) {
        ActionSpace::Discrete(spec.action_spaces.iter().map(ActionSpace::encoded_dim).product())
    } else if spec.action_spaces.iter().all(|a| !a.is_discrete()) {
        ActionSpace::Continuous(spec.action_spaces.iter().map(ActionSpace::dim).sum())
    } else {
        return Err(Error::config("joint view needs all-discrete or all-continuous actions"));
    };
    Ok(EnvSpec {
        id: spec.id.clone(),
        n_agents: 1,
        state_dim: spec.state_dim,
        obs_dims: vec![spec.obs_dims.iter().sum()],
        action_spaces: vec![space],
        horizon: spec.horizon,
    })
}

/// Joint action: mixed-radix index with agent 0 most significant, or the
/// concatenation of continuous actions.
pub fn joint_action(spaces: &[ActionSpace], actions: &[Vec<f64>]) -> Vec<f64> {
    if spaces.iter().all(ActionSpace::is_discrete) {
        let idx = spaces
            .iter()
            .zip(actions)
            .fold(0usize, |acc, (s, a)| acc * s.encoded_dim() + a[0] as usize);
        vec![idx as f64]
    } else {
        actions.concat()
    }
}

/// Inverse of [`joint_action`].
pub fn split_joint_action(spaces: &[ActionSpace], joint: &[f64]) -> Vec<Vec<f64>> {
    if spaces.iter().all(ActionSpace::is_discrete) {
        let mut idx = joint[0] as usize;
        let mut out = vec![Vec::new(); spaces.len()];
        for (i, s) in spaces.iter().enumerate().rev() {
            let n = s.encoded_dim();
            out[i] = vec![(idx % n) as f64];
            idx /= n;
        }
        out
    } else {
        let mut out = Vec::with_capacity(spaces.len());
        let mut k = 0;
        for s in spaces {
            out.push(joint[k..k + s.dim()].to_vec());
            k += s.dim();
        }
        out
    }
}

/// Dataset steps arranged for baseline updates.
#[derive(Clone, Debug)]
pub struct DatasetBatch {
    /// One batch per learner, ending at step `t`.
    pub histories: Vec<HistoryBatch>,
    /// Histories ending at step `t + 1`.
    pub next_histories: Vec<HistoryBatch>,
    pub states: Vec<Vec<f64>>,
    pub next_states: Vec<Vec<f64>>,
    /// `actions[learner][row]`.
    pub actions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<f64>,
    /// 0 at absorbing transitions.
    pub masks: Vec<f64>,
}

impl DatasetBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Learner-facing history ending at observation index `t_obs` (which may be
/// the trajectory length, meaning the final observation).
fn view_history(ds: &OfflineDataset, spaces: &[ActionSpace], view: AgentView, traj: usize, t_obs: usize, window: usize) -> Vec<Vec<f64>> {
    let tr = &ds.trajectories[traj];
    let obs_at = |k: usize| -> &[Vec<f64>] {
        if k < tr.len() {
            &tr.steps[k].obs
        } else {
            &tr.final_obs
        }
    };
    let start = (t_obs + 1).saturating_sub(window);
    match view {
        AgentView::Decentralized => (0..ds.meta.n_agents)
            .map(|i| {
                let mut h = AgentHistory::new(window, ds.meta.obs_dims[i], spaces[i]);
                for k in start..=t_obs {
                    let prev = (k > 0).then(|| tr.steps[k - 1].action[i].as_slice());
                    h.push(&obs_at(k)[i], prev);
                }
                h.flat()
            })
            .collect(),
        AgentView::Joint => {
            let js = joint_spec(&ds.env().expect("dataset env").spec()).expect("joint spec");
            let mut h = AgentHistory::new(window, js.obs_dims[0], js.action_spaces[0]);
            for k in start..=t_obs {
                let prev = (k > 0).then(|| joint_action(spaces, &tr.steps[k - 1].action));
                h.push(&obs_at(k).concat(), prev.as_deref());
            }
            vec![h.flat()]
        }
    }
}

/// Uniform minibatch of dataset steps.
pub fn sample_batch(ds: &OfflineDataset, view: AgentView, window: usize, batch_size: usize, rng: &mut Rng) -> DatasetBatch {
    let spaces = ds.action_spaces();
    let learners = match view {
        AgentView::Decentralized => ds.meta.n_agents,
        AgentView::Joint => 1,
    };
    let token_dims: Vec<usize> = match view {
        AgentView::Decentralized => (0..learners)
            .map(|i| AgentHistory::token_dim(ds.meta.obs_dims[i], spaces[i]))
            .collect(),
        AgentView::Joint => {
            let js = joint_spec(&ds.env().expect("dataset env").spec()).expect("joint spec");
            vec![AgentHistory::token_dim(js.obs_dims[0], js.action_spaces[0])]
        }
    };
    let mut batch = DatasetBatch {
        histories: token_dims.iter().map(|&d| HistoryBatch::new(d)).collect(),
        next_histories: token_dims.iter().map(|&d| HistoryBatch::new(d)).collect(),
        states: Vec::with_capacity(batch_size),
        next_states: Vec::with_capacity(batch_size),
        actions: vec![Vec::with_capacity(batch_size); learners],
        rewards: Vec::with_capacity(batch_size),
        masks: Vec::with_capacity(batch_size),
    };
    for _ in 0..batch_size {
        let (traj, t) = ds.locate(rng.random_range(0..ds.n_steps()));
        let tr = &ds.trajectories[traj];
        let step = &tr.steps[t];
        for (l, h) in view_history(ds, &spaces, view, traj, t, window).into_iter().enumerate() {
            batch.histories[l].push(h);
        }
        for (l, h) in view_history(ds, &spaces, view, traj, t + 1, window).into_iter().enumerate() {
            batch.next_histories[l].push(h);
        }
        batch.states.push(step.state.clone());
        batch.next_states.push(tr.next_state(t).to_vec());
        match view {
            AgentView::Decentralized => {
                for (i, a) in step.action.iter().enumerate() {
                    batch.actions[i].push(a.clone());
                }
            }
            AgentView::Joint => batch.actions[0].push(joint_action(&spaces, &step.action)),
        }
        batch.rewards.push(step.reward);
        batch.masks.push(if step.done { 0.0 } else { 1.0 });
    }
    batch
}
