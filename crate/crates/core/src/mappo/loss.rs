use serde::{Deserialize, Serialize};

use super::agent::{Team, TeamParams};
use super::PpoConfig;
use crate::envs::ActionSpace;
use crate::nn::{HistoryBatch, Matrix, Tape, Var};

/// Scalar clipped surrogate loss `−mean(min(ρ·A, clip(ρ, 1±ε)·A))`.
pub fn clipped_surrogate(ratio: &[f64], advantages: &[f64], clip: f64) -> f64 {
    let n = ratio.len() as f64;
    -ratio
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a))
        .sum::<f64>()
        / n
}

/// Adaptive entropy bonus.
///
/// `Ê = min(−mean(ρ·log π), −mean(ρ_clip·log π))` estimates the current
/// policy's entropy from old-policy samples. Returns `(−Ê·α, α′)` with
/// `α′ = max(0, α + coeff·(target − Ê))`; the bonus uses the pre-update `α`.
pub fn entropy_bonus(ratio: &[f64], clipped: &[f64], new_log_probs: &[f64], alpha: f64, coeff: f64, target: f64) -> (f64, f64) {
    let e = entropy_estimate(ratio, clipped, new_log_probs);
    (-e * alpha, (alpha + coeff * (target - e)).max(0.0))
}

pub fn entropy_estimate(ratio: &[f64], clipped: &[f64], new_log_probs: &[f64]) -> f64 {
    let n = ratio.len() as f64;
    let a = -ratio.iter().zip(new_log_probs).map(|(r, l)| r * l).sum::<f64>() / n;
    let b = -clipped.iter().zip(new_log_probs).map(|(r, l)| r * l).sum::<f64>() / n;
    a.min(b)
}

/// Out-of-range error `Σ_d 1[|a_d| > 1]·(1 − |a_d|)²` of one action.
pub fn action_range_error(action: &[f64]) -> f64 {
    action
        .iter()
        .filter(|a| a.abs() > 1.0)
        .map(|a| (1.0 - a.abs()).powi(2))
        .sum()
}

/// `coeff·max(mean(ρ·err), mean(ρ_clip·err))`.
pub fn action_penalty(actions: &[Vec<f64>], ratio: &[f64], clipped: &[f64], coeff: f64) -> f64 {
    let n = actions.len() as f64;
    let err: Vec<f64> = actions.iter().map(|a| action_range_error(a)).collect();
    let a = ratio.iter().zip(&err).map(|(r, e)| r * e).sum::<f64>() / n;
    let b = clipped.iter().zip(&err).map(|(r, e)| r * e).sum::<f64>() / n;
    coeff * a.max(b)
}

/// Training rows for one PPO minibatch.
#[derive(Clone, Debug)]
pub struct Minibatch {
    /// One batch per agent, one history per row.
    pub histories: Vec<HistoryBatch>,
    pub states: Vec<Vec<f64>>,
    /// `actions[agent][row]`.
    pub actions: Vec<Vec<Vec<f64>>>,
    /// `old_log_probs[agent][row]`.
    pub old_log_probs: Vec<Vec<f64>>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Per-minibatch diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub actor: f64,
    pub critic: f64,
    /// Mean over agents of the entropy estimate `Ê`.
    pub entropy: f64,
    pub penalty: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Full MAPPO objective for one minibatch: per-agent clipped surrogates,
/// entropy bonuses and action penalties, plus the mixed critic loss.
pub fn ppo_loss(tape: &mut Tape, team: &Team, params: &TeamParams, mb: &Minibatch, cfg: &PpoConfig, alpha: f64) -> (Var, LossParts) {
    let n = mb.len();
    let adv = tape.leaf(Matrix::column(&mb.advantages));
    let mut terms = Vec::new();
    let mut embs = Vec::with_capacity(team.n_agents());
    let mut parts = LossParts::default();
    for (i, agent) in team.agents.iter().enumerate() {
        let emb = agent.embed(tape, params.memory[i], &mb.histories[i]);
        embs.push(emb);
        let dist = agent.dist_params(tape, params.actor[i], emb);
        let logp = agent.log_prob(tape, dist, &mb.actions[i]);
        let old = tape.leaf(Matrix::column(&mb.old_log_probs[i]));
        let diff = tape.sub(logp, old);
        let ratio = tape.exp(diff);
        let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);

        let s1 = tape.mul(ratio, adv);
        let s2 = tape.mul(clipped, adv);
        let surr = tape.minimum(s1, s2);
        let surr = tape.mean_all(surr);
        let actor = tape.neg(surr);
        terms.push(actor);

        let rl = tape.mul(ratio, logp);
        let rl = tape.mean_all(rl);
        let e1 = tape.neg(rl);
        let cl = tape.mul(clipped, logp);
        let cl = tape.mean_all(cl);
        let e2 = tape.neg(cl);
        let ent = tape.minimum(e1, e2);
        parts.entropy += tape.scalar(ent) / team.n_agents() as f64;
        if alpha != 0.0 {
            terms.push(tape.scale(ent, -alpha));
        }

        if matches!(agent.space, ActionSpace::Continuous(_)) && cfg.action_penalty_coef != 0.0 {
            let err: Vec<f64> = mb.actions[i].iter().map(|a| super::loss::action_range_error(a)).collect();
            if err.iter().any(|&e| e > 0.0) {
                let err = tape.leaf(Matrix::column(&err));
                let p1 = tape.mul(ratio, err);
                let p1 = tape.mean_all(p1);
                let p2 = tape.mul(clipped, err);
                let p2 = tape.mean_all(p2);
                let pen = tape.maximum(p1, p2);
                let pen = tape.scale(pen, cfg.action_penalty_coef);
                parts.penalty += tape.scalar(pen);
                terms.push(pen);
            }
        }

        parts.actor += tape.scalar(actor);
        let (r, d) = (tape.value(ratio), tape.value(diff));
        parts.approx_kl += -d.sum() / n as f64;
        parts.clip_fraction += r.data().iter().filter(|x| (*x - 1.0).abs() > cfg.clip).count() as f64 / n as f64;
    }
    parts.approx_kl /= team.n_agents() as f64;
    parts.clip_fraction /= team.n_agents() as f64;

    let s = tape.leaf(Matrix::from_rows(&mb.states, team.state_dim));
    let v = team.value.forward(tape, params.critic, &embs, s);
    let ret = tape.leaf(Matrix::column(&mb.returns));
    let d = tape.sub(v, ret);
    let sq = tape.square(d);
    let critic = tape.mean_all(sq);
    let critic = tape.scale(critic, 0.5 * cfg.critic_coef);
    parts.critic = tape.scalar(critic);
    terms.push(critic);
    (tape.sum_vars(&terms), parts)
}
