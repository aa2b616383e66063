use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::agent::Team;
use super::gae::gae_with_timeouts;
use super::loss::{ppo_loss, LossParts, Minibatch};
use super::PpoConfig;
use crate::nn::{clip_grad_norm_all, Adam, AdamConfig, HistoryBatch, ParameterSet, Tape};
use crate::rollout::RolloutBuffer;
use crate::{Error, Result, Rng};

/// Averages over the minibatches of one update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub penalty: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Entropy multiplier after the update.
    pub alpha: f64,
    pub minibatches: usize,
    pub transitions: usize,
}

/// Optimizer state for a [`Team`]: one Adam per parameter set and the
/// adaptive entropy multiplier.
#[derive(Clone, Debug)]
pub struct PpoLearner {
    pub config: PpoConfig,
    /// Entropy multiplier `α ≥ 0`.
    pub alpha: f64,
    memory_opt: Vec<Adam>,
    actor_opt: Vec<Adam>,
    critic_opt: Adam,
}

/// Flattened buffer rows with returns and advantages.
struct Rows {
    histories: Vec<Vec<Vec<f64>>>,
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<Vec<f64>>>,
    log_probs: Vec<Vec<f64>>,
    returns: Vec<f64>,
    advantages: Vec<f64>,
}

impl PpoLearner {
    pub fn new(team: &Team, config: PpoConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            alpha: 0.0,
            memory_opt: team
                .agents
                .iter()
                .map(|a| Adam::new(&a.memory_params, AdamConfig::with_lr(config.memory_lr)))
                .collect(),
            actor_opt: team
                .agents
                .iter()
                .map(|a| Adam::new(&a.params, AdamConfig::with_lr(config.lr)))
                .collect(),
            critic_opt: Adam::new(&team.value.params, AdamConfig::with_lr(config.lr)),
            config,
        })
    }

    fn rows(&self, buffer: &RolloutBuffer) -> Result<Rows> {
        let cfg = &self.config;
        let mut rows = Rows {
            histories: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            log_probs: Vec::new(),
            returns: Vec::new(),
            advantages: Vec::new(),
        };
        for r in &buffer.rollouts {
            let col = |f: fn(&crate::rollout::SyntheticTransition) -> f64| r.steps.iter().map(f).collect::<Vec<f64>>();
            let (ret, adv) = gae_with_timeouts(
                &col(|s| s.reward),
                &col(|s| s.value),
                &col(|s| s.next_value),
                &col(|s| s.mask),
                &col(|s| s.timeout),
                cfg.gamma,
                cfg.gae_lambda,
            )?;
            rows.returns.extend(ret);
            rows.advantages.extend(adv);
            for s in &r.steps {
                rows.histories.push(s.histories.clone());
                rows.states.push(s.state.clone());
                rows.actions.push(s.action.clone());
                rows.log_probs.push(s.log_probs.clone());
            }
        }
        if cfg.normalize_advantages && rows.advantages.len() > 1 {
            let n = rows.advantages.len() as f64;
            let mean = rows.advantages.iter().sum::<f64>() / n;
            let var = rows.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt().max(1e-8);
            rows.advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
        }
        Ok(rows)
    }

    fn minibatch(team: &Team, rows: &Rows, idx: &[usize]) -> Minibatch {
        let na = team.n_agents();
        Minibatch {
            histories: (0..na)
                .map(|i| {
                    let mut b = HistoryBatch::new(team.agents[i].token_dim());
                    for &k in idx {
                        b.push(rows.histories[k][i].clone());
                    }
                    b
                })
                .collect(),
            states: idx.iter().map(|&k| rows.states[k].clone()).collect(),
            actions: (0..na).map(|i| idx.iter().map(|&k| rows.actions[k][i].clone()).collect()).collect(),
            old_log_probs: (0..na).map(|i| idx.iter().map(|&k| rows.log_probs[k][i]).collect()).collect(),
            advantages: idx.iter().map(|&k| rows.advantages[k]).collect(),
            returns: idx.iter().map(|&k| rows.returns[k]).collect(),
        }
    }

    /// Run `epochs` passes of shuffled minibatches over the buffer.
    ///
    /// A non-finite loss aborts the update before any parameter changes
    /// for that minibatch.
    pub fn update(&mut self, team: &mut Team, buffer: &RolloutBuffer, rng: &mut Rng) -> Result<UpdateReport> {
        let rows = self.rows(buffer)?;
        let n = rows.states.len();
        if n == 0 {
            return Err(Error::input("empty rollout buffer"));
        }
        let cfg = self.config.clone();
        let mut report = UpdateReport {
            transitions: n,
            ..UpdateReport::default()
        };
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(rng);
            for idx in order.chunks(cfg.batch_size) {
                let mb = Self::minibatch(team, &rows, idx);
                let parts = self.step(team, &mb)?;
                report.actor += parts.actor;
                report.critic += parts.critic;
                report.entropy += parts.entropy;
                report.penalty += parts.penalty;
                report.approx_kl += parts.approx_kl;
                report.clip_fraction += parts.clip_fraction;
                report.minibatches += 1;
            }
        }
        let m = report.minibatches as f64;
        report.actor /= m;
        report.critic /= m;
        report.entropy /= m;
        report.penalty /= m;
        report.approx_kl /= m;
        report.clip_fraction /= m;
        report.alpha = self.alpha;
        Ok(report)
    }

    /// One gradient step on a minibatch, then the entropy multiplier update.
    pub fn step(&mut self, team: &mut Team, mb: &Minibatch) -> Result<LossParts> {
        let cfg = &self.config;
        let mut tape = Tape::new();
        let (loss, parts) = ppo_loss(&mut tape, team, &team.params(), mb, cfg, self.alpha);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite PPO loss {value}")));
        }
        let grads = tape.backward(loss);
        let mut sets: Vec<&mut ParameterSet> = Vec::new();
        for a in team.agents.iter_mut() {
            sets.push(&mut a.memory_params);
            sets.push(&mut a.params);
        }
        sets.push(&mut team.value.params);
        for s in sets.iter_mut() {
            s.zero_grad();
            tape.accumulate_into(&grads, s);
        }
        clip_grad_norm_all(&mut sets, cfg.max_grad_norm);
        for (i, a) in team.agents.iter_mut().enumerate() {
            self.memory_opt[i].step(&mut a.memory_params)?;
            self.actor_opt[i].step(&mut a.params)?;
        }
        self.critic_opt.step(&mut team.value.params)?;
        self.alpha = (self.alpha + cfg.entropy_coef * (cfg.entropy_target - parts.entropy)).max(0.0);
        Ok(parts)
    }
}

/// One PPO update of `team` on `buffer`.
pub fn ppo_update(learner: &mut PpoLearner, team: &mut Team, buffer: &RolloutBuffer, rng: &mut Rng) -> Result<UpdateReport> {
    learner.update(team, buffer, rng)
}
