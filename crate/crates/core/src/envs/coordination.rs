use super::{ActionSpace, EnvSpec, EnvState};
use crate::{Error, Result};

/// One-hot over `{start, (←,←), (←,→), (→,←), (→,→)}`.
pub const COORD_STATE_DIM: usize = 5;

/// Iterated two-player coordination game.
///
/// Action 0 is ←, action 1 is →. Both players receive 1 when they pick the
/// same side and 0 otherwise. The state records the previous joint action;
/// every agent observes it fully.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinationGame {
    pub horizon: usize,
}

impl Default for CoordinationGame {
    fn default() -> Self {
        Self { horizon: 25 }
    }
}

impl CoordinationGame {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            id: "coordgame-v0".into(),
            n_agents: 2,
            state_dim: COORD_STATE_DIM,
            obs_dims: vec![COORD_STATE_DIM; 2],
            action_spaces: vec![ActionSpace::Discrete(2); 2],
            horizon: self.horizon,
        }
    }

    pub fn reset() -> EnvState {
        let mut s = vec![0.0; COORD_STATE_DIM];
        s[0] = 1.0;
        EnvState { s, t: 0 }
    }

    pub fn transition(&self, action: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
        let mut idx = [0usize; 2];
        for (i, a) in action.iter().enumerate() {
            let v = *a.first().ok_or_else(|| Error::input("empty action"))?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::input(format!("agent {i} action {v} is not 0 or 1")));
            }
            idx[i] = v as usize;
        }
        let mut s = vec![0.0; COORD_STATE_DIM];
        s[1 + 2 * idx[0] + idx[1]] = 1.0;
        let reward = if idx[0] == idx[1] { 1.0 } else { 0.0 };
        Ok((s, reward))
    }

    pub fn observe(s: &[f64]) -> Vec<Vec<f64>> {
        vec![s.to_vec(), s.to_vec()]
    }
}

/// Nearest one-hot vector; ties go to the lowest index.
pub fn project_one_hot(s: &mut [f64]) {
    let mut best = 0;
    for i in 1..s.len() {
        if s[i] > s[best] {
            best = i;
        }
    }
    for (i, x) in s.iter_mut().enumerate() {
        *x = if i == best { 1.0 } else { 0.0 };
    }
}
