//! Ensemble world model: dynamics, reward and termination from `(s, a)`.
//!
//! Each member maps normalized `[s, enc(a)]` to a diagonal Gaussian over
//! normalized `[s′ − s, r]` and a termination logit. Predictions combine
//! the elite members: the next state is drawn from one elite picked
//! uniformly, the reward is the elite mean, termination is a strict-majority
//! vote, and the elites' disagreement gives the uncertainties `ε_r`, `ε_g`.

mod checkpoint;
mod train;
mod uncertainty;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetStats;
use crate::envs::{ActionSpace, Env, EnvState};
use crate::nn::{sigmoid, Matrix, Mlp, ParameterSet, LOG_STD_MAX, LOG_STD_MIN};
use crate::Rng;

pub use checkpoint::{load_ensemble, save_ensemble};
pub use train::{train_ensemble, WorldModelConfig};
pub use uncertainty::{epistemic_general_uncertainty, epistemic_reward_uncertainty};

/// Output of one model step.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelPrediction {
    pub next_state: Vec<f64>,
    /// Mean elite reward, clipped to the dataset reward range.
    pub reward: f64,
    /// 0 when the model predicts an absorbing state, else 1.
    pub mask: f64,
    pub eps_r: f64,
    pub eps_g: f64,
}

/// Anything that can advance a batch of global states under joint actions.
pub trait Dynamics: Sync {
    /// One prediction per row; row `i` draws randomness only from `rngs[i]`.
    fn predict(&self, states: &[Vec<f64>], actions: &[Vec<Vec<f64>>], rngs: &mut [Rng]) -> Vec<ModelPrediction>;

    /// Default rollout timeout threshold `l_ε`.
    fn uncertainty_threshold(&self) -> f64 {
        f64::INFINITY
    }

    /// Box that every predicted state lies in, if the model enforces one.
    fn state_bounds(&self) -> Option<(&[f64], &[f64])> {
        None
    }
}

/// Affine input/target normalization fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
}

impl Normalization {
    pub(crate) fn fit(x: &Matrix, y: &Matrix) -> Self {
        let (in_mean, in_std) = column_moments(x);
        let (out_mean, out_std) = column_moments(y);
        Self {
            in_mean,
            in_std,
            out_mean,
            out_std,
        }
    }

    pub(crate) fn inputs(&self, x: &Matrix) -> Matrix {
        standardize(x, &self.in_mean, &self.in_std)
    }

    pub(crate) fn targets(&self, y: &Matrix) -> Matrix {
        standardize(y, &self.out_mean, &self.out_std)
    }
}

fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mut mean = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (a, x) in mean.iter_mut().zip(m.row(r)) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let mut var = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for ((v, x), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *v += (x - mu).powi(2);
        }
    }
    // Constant columns keep unit scale.
    let std = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s < 1e-8 {
                1.0
            } else {
                s
            }
        })
        .collect();
    (mean, std)
}

fn standardize(m: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for ((x, mu), s) in out.row_mut(r).iter_mut().zip(mean).zip(std) {
            *x = (*x - mu) / s;
        }
    }
    out
}

/// Per-member raw-scale predictions for a batch.
#[derive(Clone, Debug)]
pub struct MemberOutput {
    /// `B × (d+1)` means of `[s′ − s, r]`.
    pub mean: Matrix,
    /// `B × (d+1)` standard deviations.
    pub std: Matrix,
    pub p_done: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorldModelEnsemble {
    pub env_id: String,
    pub state_dim: usize,
    pub action_spaces: Vec<ActionSpace>,
    pub mlp: Mlp,
    pub members: Vec<ParameterSet>,
    pub elites: Vec<usize>,
    /// Uncertainty cap and rollout timeout threshold.
    pub l_eps: f64,
    pub stats: DatasetStats,
    pub norm: Normalization,
    pub project_one_hot: bool,
    /// Validation MSE of every member.
    pub val_mse: Vec<f64>,
}

impl WorldModelEnsemble {
    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_spaces.iter().map(ActionSpace::encoded_dim).sum::<usize>()
    }

    /// `[s, enc(a)]` rows. Continuous actions are clipped to the actuator
    /// range, as the simulators do.
    pub fn encode_inputs(&self, states: &[Vec<f64>], actions: &[Vec<Vec<f64>>]) -> Matrix {
        let mut data = Vec::with_capacity(states.len() * self.input_dim());
        for (s, a) in states.iter().zip(actions) {
            data.extend_from_slice(s);
            for (sp, ai) in self.action_spaces.iter().zip(a) {
                match sp {
                    ActionSpace::Continuous(_) => data.extend(ai.iter().map(|x| x.clamp(-1.0, 1.0))),
                    ActionSpace::Discrete(_) => sp.encode(ai, &mut data),
                }
            }
        }
        Matrix::from_vec(states.len(), self.input_dim(), data)
    }

    /// Raw-scale outputs of member `m` on encoded inputs.
    pub fn member_output(&self, m: usize, inputs: &Matrix) -> MemberOutput {
        let k = self.state_dim + 1;
        let out = self.mlp.eval(&self.members[m], &self.norm.inputs(inputs));
        let b = out.rows();
        let mut mean = Matrix::zeros(b, k);
        let mut std = Matrix::zeros(b, k);
        let mut p_done = Vec::with_capacity(b);
        for r in 0..b {
            let row = out.row(r);
            for c in 0..k {
                let (mu, s) = (self.norm.out_mean[c], self.norm.out_std[c]);
                mean.set(r, c, mu + s * row[c]);
                std.set(r, c, s * row[k + c].clamp(LOG_STD_MIN, LOG_STD_MAX).exp());
            }
            p_done.push(sigmoid(row[2 * k]));
        }
        MemberOutput { mean, std, p_done }
    }

    fn elite_outputs(&self, inputs: &Matrix) -> Vec<MemberOutput> {
        self.elites.iter().map(|&m| self.member_output(m, inputs)).collect()
    }

    /// Uncapped `(ε_r, ε_g)` per row from the elites' mean predictions.
    pub fn uncertainties(&self, states: &[Vec<f64>], inputs: &Matrix) -> Vec<(f64, f64)> {
        let outs = self.elite_outputs(inputs);
        (0..inputs.rows())
            .map(|r| uncertainty_row(&outs, r, &states[r], self.state_dim))
            .collect()
    }

    /// Same as [`uncertainties`](Self::uncertainties) for arbitrary encoded
    /// inputs whose state part is the first `state_dim` columns.
    pub fn uncertainties_encoded(&self, inputs: &Matrix) -> Vec<(f64, f64)> {
        let states: Vec<Vec<f64>> = (0..inputs.rows())
            .map(|r| inputs.row(r)[..self.state_dim].to_vec())
            .collect();
        self.uncertainties(&states, inputs)
    }

    /// One step for a single `(s, a)`.
    pub fn model_step(&self, s: &[f64], a: &[Vec<f64>], rng: &mut Rng) -> ModelPrediction {
        self.predict(&[s.to_vec()], &[a.to_vec()], std::slice::from_mut(rng))
            .pop()
            .expect("one prediction")
    }
}

fn uncertainty_row(outs: &[MemberOutput], r: usize, s: &[f64], d: usize) -> (f64, f64) {
    let preds: Vec<Vec<f64>> = outs
        .iter()
        .map(|o| {
            let row = o.mean.row(r);
            let mut v: Vec<f64> = (0..d).map(|c| s[c] + row[c]).collect();
            v.push(row[d]);
            v
        })
        .collect();
    let rewards: Vec<f64> = preds.iter().map(|p| p[d]).collect();
    (
        epistemic_reward_uncertainty(&rewards),
        epistemic_general_uncertainty(&preds),
    )
}

impl Dynamics for WorldModelEnsemble {
    fn uncertainty_threshold(&self) -> f64 {
        self.l_eps
    }

    fn state_bounds(&self) -> Option<(&[f64], &[f64])> {
        Some((&self.stats.state_min, &self.stats.state_max))
    }

    fn predict(&self, states: &[Vec<f64>], actions: &[Vec<Vec<f64>>], rngs: &mut [Rng]) -> Vec<ModelPrediction> {
        let d = self.state_dim;
        let inputs = self.encode_inputs(states, actions);
        let outs = self.elite_outputs(&inputs);
        let n = outs.len();
        (0..states.len())
            .map(|r| {
                let rng = &mut rngs[r];
                let pick = rng.random_range(0..n);
                let o = &outs[pick];
                let mut next: Vec<f64> = (0..d)
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(rng);
                        states[r][c] + o.mean.get(r, c) + o.std.get(r, c) * z
                    })
                    .collect();
                self.stats.clip_state(&mut next);
                if self.project_one_hot {
                    crate::envs::project_one_hot_state(&mut next);
                }
                let reward = outs.iter().map(|o| o.mean.get(r, d)).sum::<f64>() / n as f64;
                let terminal_votes = outs.iter().filter(|o| o.p_done[r] > 0.5).count();
                let (eps_r, eps_g) = uncertainty_row(&outs, r, &states[r], d);
                ModelPrediction {
                    next_state: next,
                    reward: self.stats.clip_reward(reward),
                    mask: if 2 * terminal_votes > n { 0.0 } else { 1.0 },
                    eps_r: eps_r.min(self.l_eps),
                    eps_g: eps_g.min(self.l_eps),
                }
            })
            .collect()
    }
}

/// The real simulator behind the [`Dynamics`] interface, with zero
/// uncertainty.
pub struct GroundTruth {
    pub env: Env,
}

impl Dynamics for GroundTruth {
    fn predict(&self, states: &[Vec<f64>], actions: &[Vec<Vec<f64>>], _rngs: &mut [Rng]) -> Vec<ModelPrediction> {
        states
            .iter()
            .zip(actions)
            .map(|(s, a)| {
                let st = EnvState { s: s.clone(), t: 0 };
                let r = self.env.step(&st, a).expect("valid joint action");
                ModelPrediction {
                    next_state: r.state.s,
                    reward: r.reward,
                    mask: if r.done { 0.0 } else { 1.0 },
                    eps_r: 0.0,
                    eps_g: 0.0,
                }
            })
            .collect()
    }
}
