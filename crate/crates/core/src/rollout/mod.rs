//! Branched synthetic rollouts through a learned model.
//!
//! Each branch starts from a dataset step with the agents' real histories,
//! then alternates policy sampling and model steps for at most `k` steps.
//! Rewards are penalized by the model's epistemic uncertainty, and a branch
//! is cut with a timeout as soon as `ε_g` reaches `l_ε` or the horizon is
//! hit. The cut transition is kept with `ζ = 0` so its value bootstraps.

use serde::{Deserialize, Serialize};

use crate::dataset::{sample_history, AgentHistory, OfflineDataset};
use crate::envs::Env;
use crate::mappo::Team;
use crate::nn::HistoryBatch;
use crate::worldmodel::Dynamics;
use crate::{parallel, rng_stream, Error, Result, Rng};

/// Branches advanced together in one batched pass.
const LOCKSTEP_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Maximum rollout length `k`.
    pub horizon: usize,
    /// Branches per call `b`.
    pub batch: usize,
    pub lambda_r: f64,
    pub lambda_g: f64,
    /// Timeout threshold; `None` uses the model's calibrated value.
    pub l_eps: Option<f64>,
    /// When false, branches are cut only by the horizon (`l_ε = ∞`).
    pub adaptive_termination: bool,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            batch: 200,
            lambda_r: 0.0,
            lambda_g: 1.0,
            l_eps: None,
            adaptive_termination: true,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.batch == 0 {
            return Err(Error::config("rollout horizon and batch must be >= 1"));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_g >= 0.0) {
            return Err(Error::config("uncertainty penalties must be non-negative"));
        }
        if let Some(l) = self.l_eps {
            if !(l > 0.0) {
                return Err(Error::config("l_eps must be positive"));
            }
        }
        Ok(())
    }
}

/// `r̃ = r̄ − λ_r·ε_r − λ_g·ε_g`.
pub fn penalized_reward(r_bar: f64, eps_r: f64, eps_g: f64, lambda_r: f64, lambda_g: f64) -> f64 {
    r_bar - lambda_r * eps_r - lambda_g * eps_g
}

/// `ζ_j = 0` on the last step of a rollout started at `t`, or once
/// `ε_g ≥ l_ε`; 1 otherwise.
pub fn timeout_mask(j: usize, t: usize, k: usize, eps_g: f64, l_eps: f64) -> f64 {
    if j + 1 == t + k || eps_g >= l_eps {
        0.0
    } else {
        1.0
    }
}

/// One synthetic step with everything the PPO update needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTransition {
    /// Flat history tokens per agent, ending at this step.
    pub histories: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub action: Vec<Vec<f64>>,
    /// Penalized reward `r̃`.
    pub reward: f64,
    /// Model reward `r̄` before the penalty.
    pub model_reward: f64,
    /// Model termination mask `f̂` (0 at a predicted absorbing state).
    pub mask: f64,
    /// Timeout mask `ζ`.
    pub timeout: f64,
    pub next_state: Vec<f64>,
    /// Behaviour log-probabilities per agent at collection time.
    pub log_probs: Vec<f64>,
    /// Mixed value of this step at collection time.
    pub value: f64,
    /// Mixed value of the next state and histories.
    pub next_value: f64,
    pub eps_r: f64,
    pub eps_g: f64,
}

/// One branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// Dataset trajectory and step the branch started from.
    pub traj: usize,
    pub t: usize,
    pub steps: Vec<SyntheticTransition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub rollouts: Vec<Rollout>,
    pub horizon: usize,
    pub batch: usize,
    pub lambda_r: f64,
    pub lambda_g: f64,
    pub l_eps: f64,
    pub policy_version: u64,
}

impl RolloutBuffer {
    pub fn n_transitions(&self) -> usize {
        self.rollouts.iter().map(|r| r.steps.len()).sum()
    }

    pub fn mean_length(&self) -> f64 {
        self.n_transitions() as f64 / self.rollouts.len().max(1) as f64
    }

    /// Fraction of rollouts cut by uncertainty before the horizon.
    pub fn truncation_fraction(&self) -> f64 {
        let cut = self
            .rollouts
            .iter()
            .filter(|r| {
                let last = r.steps.last().expect("rollouts are non-empty");
                r.steps.len() < self.horizon && last.mask == 1.0
            })
            .count();
        cut as f64 / self.rollouts.len().max(1) as f64
    }

    pub fn mean_eps_g(&self) -> f64 {
        let n = self.n_transitions().max(1) as f64;
        self.rollouts.iter().flat_map(|r| &r.steps).map(|s| s.eps_g).sum::<f64>() / n
    }
}

/// Generate `config.batch` branches. Branch `i` draws all of its randomness
/// (start step, actions, model noise) from its own stream of `seed`, so the
/// buffer does not depend on how branches are scheduled.
pub fn generate_rollouts(
    ds: &OfflineDataset,
    env: &Env,
    team: &Team,
    dynamics: &dyn Dynamics,
    config: &RolloutConfig,
    seed: u64,
    policy_version: u64,
) -> Result<RolloutBuffer> {
    config.validate()?;
    let spec = env.spec();
    if spec.n_agents != team.n_agents() || spec.state_dim != team.state_dim || ds.meta.env_id != env.id() {
        return Err(Error::config("dataset, environment and team do not match"));
    }
    let l_eps = if config.adaptive_termination {
        config.l_eps.unwrap_or_else(|| dynamics.uncertainty_threshold())
    } else {
        f64::INFINITY
    };
    let rollouts = parallel::map_chunks(config.batch, LOCKSTEP_CHUNK, |range| {
        let mut rngs: Vec<Rng> = range.map(|i| rng_stream(seed, i as u64)).collect();
        lockstep(ds, env, team, dynamics, config, l_eps, &mut rngs)
    });
    Ok(RolloutBuffer {
        rollouts,
        horizon: config.horizon,
        batch: config.batch,
        lambda_r: config.lambda_r,
        lambda_g: config.lambda_g,
        l_eps,
        policy_version,
    })
}

fn batches(team: &Team, hist: &[Vec<AgentHistory>], rows: &[usize]) -> Vec<HistoryBatch> {
    (0..team.n_agents())
        .map(|i| {
            let mut b = HistoryBatch::new(team.agents[i].token_dim());
            for &r in rows {
                b.push(hist[r][i].flat());
            }
            b
        })
        .collect()
}

fn lockstep(
    ds: &OfflineDataset,
    env: &Env,
    team: &Team,
    dynamics: &dyn Dynamics,
    config: &RolloutConfig,
    l_eps: f64,
    rngs: &mut [Rng],
) -> Vec<Rollout> {
    let window = team.net.window;
    let n = rngs.len();
    let starts: Vec<_> = rngs.iter_mut().map(|r| sample_history(ds, window, r)).collect();
    let mut rollouts: Vec<Rollout> = starts
        .iter()
        .map(|s| Rollout {
            traj: s.traj,
            t: s.t,
            steps: Vec::with_capacity(config.horizon),
        })
        .collect();
    let mut states: Vec<Vec<f64>> = starts.iter().map(|s| s.state.clone()).collect();
    let mut hist: Vec<Vec<AgentHistory>> = starts.into_iter().map(|s| s.histories).collect();
    let mut active: Vec<usize> = (0..n).collect();

    for j in 0..config.horizon {
        if active.is_empty() {
            break;
        }
        let hb = batches(team, &hist, &active);
        let st: Vec<Vec<f64>> = active.iter().map(|&r| states[r].clone()).collect();
        let mut sub: Vec<Rng> = active.iter().map(|&r| rngs[r].clone()).collect();
        let out = team.act(&st, &hb, &mut sub);
        for (k, &r) in active.iter().enumerate() {
            if let Some(prev) = rollouts[r].steps.last_mut() {
                prev.next_value = out.values[k];
            }
        }
        let preds = dynamics.predict(&st, &out.actions, &mut sub);
        for (k, &r) in active.iter().enumerate() {
            rngs[r] = sub[k].clone();
        }

        let mut still = Vec::with_capacity(active.len());
        let mut ended = Vec::new();
        for (k, &r) in active.iter().enumerate() {
            let p = &preds[k];
            if let Some((lo, hi)) = dynamics.state_bounds() {
                debug_assert!(p.next_state.iter().zip(lo).zip(hi).all(|((x, l), h)| x >= l && x <= h));
            }
            let zeta = timeout_mask(j, 0, config.horizon, p.eps_g, l_eps);
            rollouts[r].steps.push(SyntheticTransition {
                histories: hist[r].iter().map(AgentHistory::flat).collect(),
                state: st[k].clone(),
                action: out.actions[k].clone(),
                reward: penalized_reward(p.reward, p.eps_r, p.eps_g, config.lambda_r, config.lambda_g),
                model_reward: p.reward,
                mask: p.mask,
                timeout: zeta,
                next_state: p.next_state.clone(),
                log_probs: out.log_probs[k].clone(),
                value: out.values[k],
                next_value: 0.0,
                eps_r: p.eps_r,
                eps_g: p.eps_g,
            });
            let obs = env.observe(&p.next_state);
            for (i, h) in hist[r].iter_mut().enumerate() {
                h.push(&obs[i], Some(&out.actions[k][i]));
            }
            states[r] = p.next_state.clone();
            if zeta == 0.0 || p.mask == 0.0 {
                ended.push(r);
            } else {
                still.push(r);
            }
        }
        if !ended.is_empty() {
            let hb = batches(team, &hist, &ended);
            let st: Vec<Vec<f64>> = ended.iter().map(|&r| states[r].clone()).collect();
            let v = team.values(&st, &hb);
            for (k, &r) in ended.iter().enumerate() {
                rollouts[r].steps.last_mut().expect("step just pushed").next_value = v[k];
            }
        }
        active = still;
    }
    rollouts
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::dataset::{collect, coordination_policy, reference_normalizers};
    use crate::mappo::NetConfig;
    use crate::worldmodel::{GroundTruth, ModelPrediction};

    fn setup() -> (Env, OfflineDataset, Team) {
        let env = Env::from_id("coordgame-v0").unwrap();
        let ds = collect(&env, &[coordination_policy("neutral").unwrap()], 10, 0, reference_normalizers(&env, 0)).unwrap();
        let net = NetConfig {
            embed_dim: 8,
            window: 10,
            hidden: vec![16],
            mixer_hidden: vec![8],
        };
        let team = Team::new(&env.spec(), &net, 0).unwrap();
        (env, ds, team)
    }

    /// Ground truth with `ε_g` set per call: the `n`-th call reports
    /// `schedule[n]` for every row.
    struct Scripted {
        inner: GroundTruth,
        schedule: Vec<f64>,
        calls: AtomicUsize,
        terminal_at: Option<usize>,
    }

    impl Dynamics for Scripted {
        fn predict(&self, s: &[Vec<f64>], a: &[Vec<Vec<f64>>], rngs: &mut [Rng]) -> Vec<ModelPrediction> {
            let c = self.calls.fetch_add(1, Ordering::SeqCst);
            let mut out = self.inner.predict(s, a, rngs);
            for p in &mut out {
                p.eps_g = self.schedule[c.min(self.schedule.len() - 1)];
                p.eps_r = 0.5 * p.eps_g;
                if self.terminal_at == Some(c) {
                    p.mask = 0.0;
                }
            }
            out
        }

        fn uncertainty_threshold(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn penalty_and_timeout_rules() {
        assert_eq!(penalized_reward(0.8, 0.3, 0.5, 0.0, 0.0), 0.8);
        assert!((penalized_reward(1.0, 0.3, 0.5, 1.0, 1.0) - 0.2).abs() < 1e-15);
        assert_eq!(penalized_reward(0.4, 0.0, 0.0, 3.0, 7.0), 0.4);
        assert_eq!(timeout_mask(12, 3, 10, 0.0, 1.0), 0.0);
        assert_eq!(timeout_mask(5, 3, 10, 1.0, 1.0), 0.0);
        assert_eq!(timeout_mask(5, 3, 10, 0.99, 1.0), 1.0);
    }

    #[test]
    fn full_length_without_threshold() {
        let (env, ds, team) = setup();
        let gt = GroundTruth { env: env.clone() };
        let cfg = RolloutConfig {
            horizon: 4,
            batch: 40,
            l_eps: Some(f64::INFINITY),
            ..RolloutConfig::default()
        };
        let buf = generate_rollouts(&ds, &env, &team, &gt, &cfg, 1, 0).unwrap();
        assert_eq!(buf.rollouts.len(), 40);
        assert_eq!(buf.n_transitions(), 160);
        for r in &buf.rollouts {
            let z: Vec<f64> = r.steps.iter().map(|s| s.timeout).collect();
            assert_eq!(z, vec![1.0, 1.0, 1.0, 0.0]);
            assert_eq!(r.steps[0].state, ds.trajectories[r.traj].steps[r.t].state);
            for w in r.steps.windows(2) {
                assert_eq!(w[0].next_state, w[1].state);
                assert_eq!(w[0].next_value, w[1].value);
                assert_eq!(w[1].histories[0].len(), (w[0].histories[0].len() + 8).min(10 * 8));
            }
        }
    }

    #[test]
    fn uncertainty_cuts_rollouts_early() {
        let (env, ds, team) = setup();
        let dyn_ = Scripted {
            inner: GroundTruth { env: env.clone() },
            schedule: vec![0.2, 1.0, 0.0],
            calls: AtomicUsize::new(0),
            terminal_at: None,
        };
        let cfg = RolloutConfig {
            horizon: 3,
            batch: 8,
            ..RolloutConfig::default()
        };
        let buf = generate_rollouts(&ds, &env, &team, &dyn_, &cfg, 2, 0).unwrap();
        assert_eq!(buf.l_eps, 1.0);
        for r in &buf.rollouts {
            assert_eq!(r.steps.len(), 2);
            assert_eq!(r.steps[0].timeout, 1.0);
            assert_eq!(r.steps[1].timeout, 0.0);
            assert!((r.steps[1].reward - (r.steps[1].model_reward - 1.0)).abs() < 1e-15);
        }
        assert_eq!(buf.truncation_fraction(), 1.0);

        let cfg = RolloutConfig {
            adaptive_termination: false,
            ..cfg
        };
        dyn_.calls.store(0, std::sync::atomic::Ordering::SeqCst);
        let buf = generate_rollouts(&ds, &env, &team, &dyn_, &cfg, 2, 0).unwrap();
        assert_eq!(buf.l_eps, f64::INFINITY);
        assert!(buf.rollouts.iter().all(|r| r.steps.len() == 3));
    }

    #[test]
    fn terminal_prediction_ends_rollout() {
        let (env, ds, team) = setup();
        let dyn_ = Scripted {
            inner: GroundTruth { env: env.clone() },
            schedule: vec![0.0],
            calls: AtomicUsize::new(0),
            terminal_at: Some(0),
        };
        let cfg = RolloutConfig {
            horizon: 5,
            batch: 5,
            ..RolloutConfig::default()
        };
        let buf = generate_rollouts(&ds, &env, &team, &dyn_, &cfg, 2, 0).unwrap();
        for r in &buf.rollouts {
            assert_eq!(r.steps.len(), 1);
            assert_eq!(r.steps[0].mask, 0.0);
            assert_eq!(r.steps[0].timeout, 1.0);
        }
        assert_eq!(buf.truncation_fraction(), 0.0);
    }

    #[test]
    fn reproducible_under_fixed_seed() {
        let (env, ds, team) = setup();
        let gt = GroundTruth { env: env.clone() };
        let cfg = RolloutConfig {
            horizon: 5,
            batch: 70,
            ..RolloutConfig::default()
        };
        let a = generate_rollouts(&ds, &env, &team, &gt, &cfg, 9, 0).unwrap();
        let b = generate_rollouts(&ds, &env, &team, &gt, &cfg, 9, 0).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_rollouts(&ds, &env, &team, &gt, &cfg, 10, 0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (env, ds, team) = setup();
        let gt = GroundTruth { env: env.clone() };
        for cfg in [
            RolloutConfig { horizon: 0, ..RolloutConfig::default() },
            RolloutConfig { lambda_g: -1.0, ..RolloutConfig::default() },
            RolloutConfig { l_eps: Some(0.0), ..RolloutConfig::default() },
        ] {
            assert!(generate_rollouts(&ds, &env, &team, &gt, &cfg, 0, 0).is_err());
        }
    }
}
