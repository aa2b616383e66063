use serde::{Deserialize, Serialize};

use crate::baselines::split_joint_action;
use crate::dataset::{normalized_score, AgentHistory, Normalizers};
use crate::envs::{reacher_angles, Env};
use crate::mappo::Team;
use crate::nn::HistoryBatch;
use crate::{parallel, rng_stream, Error, Result};

/// Episodes advanced together in one batched greedy pass.
const EVAL_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub episodes: usize,
    pub mean: f64,
    /// Standard error of the mean episode score.
    pub sem: f64,
    pub normalized: f64,
    pub normalized_sem: f64,
    /// Reacher only: fraction of episodes whose median `θ2` has the
    /// majority sign.
    pub convention_consistency: Option<f64>,
    pub scores: Vec<f64>,
}

/// Mean and standard error of the mean (sample deviation over `√n`; 0 for
/// a single value).
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Fraction of values sharing the majority sign; zeros count as their own
/// class.
pub fn sign_agreement(values: &[f64]) -> f64 {
    let pos = values.iter().filter(|&&v| v > 0.0).count();
    let neg = values.iter().filter(|&&v| v < 0.0).count();
    let zero = values.len() - pos - neg;
    pos.max(neg).max(zero) as f64 / values.len().max(1) as f64
}

struct EpisodeOutcome {
    score: f64,
    /// Median elbow angle over the visited states (reacher only).
    median_theta2: Option<f64>,
}

/// Greedy rollouts of `team` in the real simulator. Episode `e` resets from
/// stream `e` of `seed`.
///
/// A one-agent team on a multi-agent environment acts centrally: it sees
/// the concatenated observations and its action is split into the joint
/// action.
pub fn evaluate(env: &Env, team: &Team, n_episodes: usize, seed: u64, normalizers: Normalizers) -> Result<Evaluation> {
    let spec = env.spec();
    let central = team.n_agents() == 1 && spec.n_agents > 1;
    if n_episodes == 0 || team.state_dim != spec.state_dim || !(central || team.n_agents() == spec.n_agents) {
        return Err(Error::config(format!("team does not match {} or no episodes requested", spec.id)));
    }
    let outcomes = parallel::map_chunks(n_episodes, EVAL_CHUNK, |range| {
        let n = range.len();
        let mut rngs: Vec<_> = range.map(|e| rng_stream(seed, e as u64)).collect();
        let mut states = Vec::with_capacity(n);
        let mut histories: Vec<Vec<AgentHistory>> = Vec::with_capacity(n);
        for rng in &mut rngs {
            let (s, obs) = env.reset(rng);
            let mut h: Vec<AgentHistory> = team.agents.iter().map(|a| a.new_history()).collect();
            push_obs(&mut h, &obs, None, central);
            states.push(s);
            histories.push(h);
        }
        let mut rewards = vec![Vec::new(); n];
        let mut theta2 = vec![Vec::new(); n];
        let mut active = vec![true; n];
        while active.iter().any(|&a| a) {
            let rows: Vec<usize> = (0..n).filter(|&r| active[r]).collect();
            let per_agent: Vec<Vec<Vec<f64>>> = team
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let mut b = HistoryBatch::new(a.token_dim());
                    for &r in &rows {
                        b.push(histories[r][i].flat());
                    }
                    a.greedy(&b)
                })
                .collect();
            for (k, &r) in rows.iter().enumerate() {
                let own: Vec<Vec<f64>> = per_agent.iter().map(|p| p[k].clone()).collect();
                let joint = if central {
                    split_joint_action(&spec.action_spaces, &own[0])
                } else {
                    own.clone()
                };
                let step = env.step(&states[r], &joint).expect("greedy actions are valid");
                rewards[r].push(step.reward);
                if matches!(env, Env::Reacher(_)) {
                    theta2[r].push(reacher_angles(&step.state.s).1);
                }
                push_obs(&mut histories[r], &step.obs, Some(&own), central);
                states[r] = step.state;
                active[r] = !(step.done || step.truncated);
            }
        }
        (0..n)
            .map(|r| EpisodeOutcome {
                score: env.episode_score(&rewards[r]),
                median_theta2: (!theta2[r].is_empty()).then(|| median(&mut theta2[r])),
            })
            .collect()
    });
    let scores: Vec<f64> = outcomes.iter().map(|o| o.score).collect();
    let (mean, sem) = mean_sem(&scores);
    let span = normalizers.expert - normalizers.random;
    let medians: Vec<f64> = outcomes.iter().filter_map(|o| o.median_theta2).collect();
    Ok(Evaluation {
        episodes: n_episodes,
        mean,
        sem,
        normalized: normalized_score(mean, normalizers.expert, normalizers.random)?,
        normalized_sem: sem / span.abs(),
        convention_consistency: (!medians.is_empty()).then(|| sign_agreement(&medians)),
        scores,
    })
}

/// Append the new observations; in the central case `prev` holds the
/// single learner's joint action.
fn push_obs(h: &mut [AgentHistory], obs: &[Vec<f64>], prev: Option<&[Vec<f64>]>, central: bool) {
    if central {
        h[0].push(&obs.concat(), prev.map(|p| p[0].as_slice()));
    } else {
        for (i, hist) in h.iter_mut().enumerate() {
            hist.push(&obs[i], prev.map(|p| p[i].as_slice()));
        }
    }
}
