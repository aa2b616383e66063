//! Offline datasets: collection, statistics, splits and history sampling.

mod history;
mod io;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{ActionSpace, Env, EnvState, ScriptedPolicy, TeamPolicy};
use crate::{parallel, rng_stream, Error, Result, Rng};

pub use history::{sample_history, AgentHistory, HistorySample, HISTORY_WINDOW};
pub use io::{load, save, to_text, SCHEMA_VERSION};

/// One environment step as recorded in the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub action: Vec<Vec<f64>>,
    pub reward: f64,
    /// Absorbing state reached after this step.
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// State after the last step.
    pub final_state: Vec<f64>,
    pub final_obs: Vec<Vec<f64>>,
    /// Index into [`DatasetMeta::behaviors`].
    pub behavior: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn next_state(&self, t: usize) -> &[f64] {
        if t + 1 < self.steps.len() {
            &self.steps[t + 1].state
        } else {
            &self.final_state
        }
    }

    pub fn next_obs(&self, t: usize) -> &[Vec<f64>] {
        if t + 1 < self.steps.len() {
            &self.steps[t + 1].obs
        } else {
            &self.final_obs
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Expert and random reference scores used for normalization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub expert: f64,
    pub random: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_version: u32,
    pub env_id: String,
    pub obs_mode: String,
    pub n_agents: usize,
    pub state_dim: usize,
    pub obs_dims: Vec<usize>,
    pub action_dims: Vec<usize>,
    pub seeds: Vec<u64>,
    pub n_episodes: usize,
    pub n_steps: usize,
    pub stats_checksum: String,
    pub normalizers: Normalizers,
    pub behaviors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

/// Exact bounding boxes and score summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub reward_min: f64,
    pub reward_max: f64,
    pub score_mean: f64,
    pub score_median: f64,
    pub score_min: f64,
    pub score_max: f64,
}

impl DatasetStats {
    pub fn checksum(&self) -> String {
        let text = serde_json::to_string(self).expect("stats serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn clip_state(&self, s: &mut [f64]) {
        for ((x, lo), hi) in s.iter_mut().zip(&self.state_min).zip(&self.state_max) {
            *x = x.clamp(*lo, *hi);
        }
    }

    pub fn clip_reward(&self, r: f64) -> f64 {
        r.clamp(self.reward_min, self.reward_max)
    }
}

impl OfflineDataset {
    /// Assemble a dataset, filling counts and the stats checksum.
    pub fn new(env: &Env, trajectories: Vec<Trajectory>, seeds: Vec<u64>, normalizers: Normalizers, behaviors: Vec<String>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::input("dataset needs at least one trajectory"));
        }
        let spec = env.spec();
        let mut ds = OfflineDataset {
            meta: DatasetMeta {
                schema_version: SCHEMA_VERSION,
                env_id: env.id(),
                obs_mode: env.obs_mode().into(),
                n_agents: spec.n_agents,
                state_dim: spec.state_dim,
                obs_dims: spec.obs_dims.clone(),
                action_dims: spec.action_spaces.iter().map(ActionSpace::dim).collect(),
                seeds,
                n_episodes: trajectories.len(),
                n_steps: trajectories.iter().map(Trajectory::len).sum(),
                stats_checksum: String::new(),
                normalizers,
                behaviors,
            },
            trajectories,
        };
        ds.meta.stats_checksum = ds.compute_stats(env).checksum();
        Ok(ds)
    }

    pub fn env(&self) -> Result<Env> {
        Env::from_id(&self.meta.env_id)
    }

    pub fn n_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    /// Bounding boxes over every stored state (including final states),
    /// reward range, and episode-score summary.
    pub fn compute_stats(&self, env: &Env) -> DatasetStats {
        let d = self.meta.state_dim;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        let mut rlo = f64::INFINITY;
        let mut rhi = f64::NEG_INFINITY;
        let mut scores = Vec::with_capacity(self.trajectories.len());
        let mut visit = |s: &[f64]| {
            for (k, &x) in s.iter().enumerate() {
                lo[k] = lo[k].min(x);
                hi[k] = hi[k].max(x);
            }
        };
        for tr in &self.trajectories {
            for st in &tr.steps {
                visit(&st.state);
                rlo = rlo.min(st.reward);
                rhi = rhi.max(st.reward);
            }
            visit(&tr.final_state);
            scores.push(env.episode_score(&tr.rewards()));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        DatasetStats {
            state_min: lo,
            state_max: hi,
            reward_min: rlo,
            reward_max: rhi,
            score_mean: mean,
            score_median: median,
            score_min: sorted[0],
            score_max: sorted[m - 1],
        }
    }

    /// Trajectory-level split; the validation part gets
    /// `round(n·val_fraction)` trajectories, at least one and at most `n − 1`.
    pub fn split(&self, val_fraction: f64, rng: &mut Rng) -> Result<(OfflineDataset, OfflineDataset)> {
        let n = self.trajectories.len();
        if n < 2 {
            return Err(Error::input("split needs at least two trajectories"));
        }
        let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut val_idx = idx[..n_val].to_vec();
        let mut train_idx = idx[n_val..].to_vec();
        val_idx.sort_unstable();
        train_idx.sort_unstable();
        let part = |ids: &[usize]| {
            let trajectories: Vec<Trajectory> = ids.iter().map(|&i| self.trajectories[i].clone()).collect();
            let mut meta = self.meta.clone();
            meta.n_episodes = trajectories.len();
            meta.n_steps = trajectories.iter().map(Trajectory::len).sum();
            OfflineDataset { meta, trajectories }
        };
        Ok((part(&train_idx), part(&val_idx)))
    }
}

/// `(raw − random) / (expert − random)`.
pub fn normalized_score(raw: f64, expert: f64, random: f64) -> Result<f64> {
    let span = expert - random;
    if span == 0.0 || !span.is_finite() {
        return Err(Error::input(format!(
            "degenerate normalizers: expert {expert}, random {random}"
        )));
    }
    Ok((raw - random) / span)
}

/// Roll out one episode of `policy` in `env`.
pub fn run_episode(env: &Env, policy: &dyn TeamPolicy, behavior: usize, rng: &mut Rng) -> Trajectory {
    let (mut state, mut obs): (EnvState, Vec<Vec<f64>>) = env.reset(rng);
    let mut steps = Vec::new();
    loop {
        let action = policy.act(&state, &obs, rng);
        let r = env.step(&state, &action).expect("scripted policy produced a valid action");
        steps.push(Step {
            state: state.s,
            obs,
            action,
            reward: r.reward,
            done: r.done,
        });
        state = r.state;
        obs = r.obs;
        if r.done || r.truncated {
            break;
        }
    }
    Trajectory {
        steps,
        final_state: state.s,
        final_obs: obs,
        behavior,
    }
}

/// Collect `n_episodes` episodes; episode `e` uses `policies[e % len]` and
/// its own random stream derived from `seed`.
pub fn collect(env: &Env, policies: &[ScriptedPolicy], n_episodes: usize, seed: u64, normalizers: Normalizers) -> Result<OfflineDataset> {
    if policies.is_empty() {
        return Err(Error::input("collect needs at least one policy"));
    }
    let spec = env.spec();
    for p in policies {
        if let ScriptedPolicy::UniformRandom { spaces } = p {
            if spaces != &spec.action_spaces {
                return Err(Error::input("policy action spaces do not match the environment"));
            }
        }
        if let ScriptedPolicy::Bernoulli { p_right } = p {
            if p_right.len() != spec.n_agents || spec.action_spaces.iter().any(|a| !a.is_discrete()) {
                return Err(Error::input("bernoulli policy does not match the environment"));
            }
        }
    }
    let trajectories = parallel::map_indexed(n_episodes, |e| {
        let k = e % policies.len();
        run_episode(env, &policies[k], k, &mut rng_stream(seed, e as u64))
    });
    let behaviors = policies.iter().map(TeamPolicy::tag).collect();
    OfflineDataset::new(env, trajectories, vec![seed], normalizers, behaviors)
}

/// Reference scores: fixed at 1 and 0 for the coordination game (so the
/// normalized score is the raw score); for the reacher, the mean score of
/// 100 scripted-expert episodes (both conventions alternating) and 100
/// uniform-random episodes.
pub fn reference_normalizers(env: &Env, seed: u64) -> Normalizers {
    match env {
        Env::Coordination(_) => Normalizers { expert: 1.0, random: 0.0 },
        Env::Reacher(_) => {
            let experts = [
                ScriptedPolicy::ReacherExpert { counter_clockwise: true },
                ScriptedPolicy::ReacherExpert { counter_clockwise: false },
            ];
            let random = ScriptedPolicy::UniformRandom {
                spaces: env.spec().action_spaces,
            };
            let score = |p: &ScriptedPolicy, e: usize, stream: u64| {
                let tr = run_episode(env, p, 0, &mut rng_stream(seed, stream + e as u64));
                env.episode_score(&tr.rewards())
            };
            let expert: f64 = (0..100).map(|e| score(&experts[e % 2], e, 1 << 32)).sum::<f64>() / 100.0;
            let rand: f64 = (0..100).map(|e| score(&random, e, 2 << 32)).sum::<f64>() / 100.0;
            Normalizers { expert, random: rand }
        }
    }
}

/// The three coordination datasets: (favorable, neutral, unfavorable).
pub fn coordination_policy(kind: &str) -> Result<ScriptedPolicy> {
    let p_right = match kind {
        "favorable" => vec![0.75, 0.75],
        "neutral" => vec![0.5, 0.5],
        "unfavorable" => vec![0.25, 0.75],
        _ => return Err(Error::config(format!("unknown coordination dataset {kind:?}"))),
    };
    Ok(ScriptedPolicy::Bernoulli { p_right })
}

/// Named behaviour mixtures accepted by the command line.
pub fn behavior_policies(env: &Env, kind: &str) -> Result<Vec<ScriptedPolicy>> {
    match (env, kind) {
        (Env::Coordination(_), k) => Ok(vec![coordination_policy(k)?]),
        (Env::Reacher(_), "mixture") => Ok(vec![
            ScriptedPolicy::ReacherExpert { counter_clockwise: true },
            ScriptedPolicy::ReacherExpert { counter_clockwise: false },
        ]),
        (Env::Reacher(_), "expert-ccw") => Ok(vec![ScriptedPolicy::ReacherExpert { counter_clockwise: true }]),
        (Env::Reacher(_), "expert-cw") => Ok(vec![ScriptedPolicy::ReacherExpert { counter_clockwise: false }]),
        (Env::Reacher(_), "random") => Ok(vec![ScriptedPolicy::UniformRandom {
            spaces: env.spec().action_spaces,
        }]),
        _ => Err(Error::config(format!("unknown behaviour {kind:?} for {}", env.id()))),
    }
}
