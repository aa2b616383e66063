use serde::{Deserialize, Serialize};

use crate::dataset::AgentHistory;
use crate::envs::{ActionSpace, EnvSpec};
use crate::nn::{
    categorical_probs, sample_categorical, sample_gaussian, AttentionMemory, HistoryBatch, Matrix, MemorySpec, Mlp,
    MlpSpec, ParameterSet, Tape, Var, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::{rng_stream, Error, Result, Rng};

/// Network sizes shared by the agents, the team value and the baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// History embedding size `e_h`.
    pub embed_dim: usize,
    /// History window `W`.
    pub window: usize,
    pub hidden: Vec<usize>,
    pub mixer_hidden: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            window: crate::dataset::HISTORY_WINDOW,
            hidden: vec![256, 256],
            mixer_hidden: vec![64],
        }
    }
}

/// Per-row action distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDist {
    Categorical { probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

impl ActionDist {
    /// Distribution mode; ties between categories go to the lowest index.
    pub fn mode(&self) -> Vec<f64> {
        match self {
            ActionDist::Categorical { probs } => {
                let mut best = 0;
                for (i, &p) in probs.iter().enumerate() {
                    if p > probs[best] {
                        best = i;
                    }
                }
                vec![best as f64]
            }
            ActionDist::Gaussian { mean, .. } => mean.clone(),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            ActionDist::Categorical { probs } => vec![sample_categorical(probs, rng) as f64],
            ActionDist::Gaussian { mean, log_std } => sample_gaussian(mean, log_std, rng),
        }
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        match self {
            ActionDist::Categorical { probs } => probs[action[0] as usize].ln(),
            ActionDist::Gaussian { mean, log_std } => {
                -crate::nn::gaussian_nll(mean, log_std, action).expect("finite gaussian parameters")
            }
        }
    }
}

/// Decentralized agent: attention memory over its own history, an MLP
/// trunk and a categorical or Gaussian head.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentPolicy {
    pub index: usize,
    pub obs_dim: usize,
    pub space: ActionSpace,
    pub memory: AttentionMemory,
    pub head: Mlp,
    pub memory_params: ParameterSet,
    pub params: ParameterSet,
}

impl AgentPolicy {
    pub fn new(index: usize, obs_dim: usize, space: ActionSpace, net: &NetConfig, rng: &mut Rng) -> Result<Self> {
        let mut memory_params = ParameterSet::new();
        let spec = MemorySpec {
            token_dim: AgentHistory::token_dim(obs_dim, space),
            embed_dim: net.embed_dim,
            window: net.window,
        };
        let memory = AttentionMemory::new(&mut memory_params, &format!("agent{index}.mem"), spec, rng)?;
        let mut params = ParameterSet::new();
        let head = Mlp::new(
            &mut params,
            &format!("agent{index}.pi"),
            MlpSpec::new(net.embed_dim + obs_dim, &net.hidden, head_width(space)),
            rng,
        )?;
        Ok(Self {
            index,
            obs_dim,
            space,
            memory,
            head,
            memory_params,
            params,
        })
    }

    pub fn token_dim(&self) -> usize {
        self.memory.spec.token_dim
    }

    pub fn window(&self) -> usize {
        self.memory.spec.window
    }

    pub fn new_history(&self) -> AgentHistory {
        AgentHistory::new(self.window(), self.obs_dim, self.space)
    }

    /// Head input `[memory(h), o_t]`: the history embedding next to the
    /// current observation.
    pub fn embed(&self, tape: &mut Tape, mem: &ParameterSet, batch: &HistoryBatch) -> Var {
        let e = self.memory.forward(tape, mem, batch);
        let o = tape.leaf(batch.current(self.obs_dim));
        tape.concat_cols(&[e, o])
    }

    /// Width of [`embed`](Self::embed)'s output.
    pub fn feature_dim(&self) -> usize {
        self.memory.spec.embed_dim + self.obs_dim
    }

    /// Distribution parameters: logits, or `[mean, log_std]` with the log-std
    /// clamped to its bounds.
    pub fn dist_params(&self, tape: &mut Tape, set: &ParameterSet, emb: Var) -> Var {
        let out = self.head.forward(tape, set, emb);
        match self.space {
            ActionSpace::Discrete(_) => out,
            ActionSpace::Continuous(d) => {
                let mean = tape.slice_cols(out, 0, d);
                let ls = tape.slice_cols(out, d, 2 * d);
                let ls = tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX);
                tape.concat_cols(&[mean, ls])
            }
        }
    }

    /// `log π(a|h)` per row, `n×1`.
    pub fn log_prob(&self, tape: &mut Tape, dist: Var, actions: &[Vec<f64>]) -> Var {
        match self.space {
            ActionSpace::Discrete(_) => {
                let lp = tape.log_softmax_rows(dist);
                let idx: Vec<usize> = actions.iter().map(|a| a[0] as usize).collect();
                tape.gather_cols(lp, &idx)
            }
            ActionSpace::Continuous(d) => {
                let mean = tape.slice_cols(dist, 0, d);
                let ls = tape.slice_cols(dist, d, 2 * d);
                let target = tape.leaf(Matrix::from_rows(actions, d));
                let nll = tape.gaussian_nll(mean, ls, target);
                tape.neg(nll)
            }
        }
    }

    /// Convert a distribution-parameter matrix into per-row distributions.
    pub fn decode(&self, dist: &Matrix) -> Vec<ActionDist> {
        (0..dist.rows())
            .map(|r| {
                let row = dist.row(r);
                match self.space {
                    ActionSpace::Discrete(_) => ActionDist::Categorical {
                        probs: categorical_probs(row),
                    },
                    ActionSpace::Continuous(d) => ActionDist::Gaussian {
                        mean: row[..d].to_vec(),
                        log_std: row[d..].to_vec(),
                    },
                }
            })
            .collect()
    }

    pub fn distributions(&self, batch: &HistoryBatch) -> Vec<ActionDist> {
        let mut tape = Tape::new();
        let emb = self.embed(&mut tape, &self.memory_params, batch);
        let dist = self.dist_params(&mut tape, &self.params, emb);
        self.decode(tape.value(dist))
    }

    /// Greedy actions for a batch of histories.
    pub fn greedy(&self, batch: &HistoryBatch) -> Vec<Vec<f64>> {
        self.distributions(batch).iter().map(ActionDist::mode).collect()
    }
}

/// Head width for an action space.
pub fn head_width(space: ActionSpace) -> usize {
    match space {
        ActionSpace::Discrete(n) => n,
        ActionSpace::Continuous(d) => 2 * d,
    }
}

/// Mode of the policy's action distribution for one history.
pub fn greedy_action(policy: &AgentPolicy, history: &[f64]) -> Vec<f64> {
    let mut batch = HistoryBatch::new(policy.token_dim());
    batch.push(history.to_vec());
    policy.greedy(&batch).pop().expect("one row")
}

/// State-conditioned monotone mixing: `Σ_i |w^i(s)|·x^i + b(s)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mixer {
    pub net: Mlp,
    pub n_agents: usize,
}

impl Mixer {
    pub fn new(set: &mut ParameterSet, name: &str, state_dim: usize, n_agents: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let net = Mlp::new(set, name, MlpSpec::new(state_dim, hidden, n_agents + 1), rng)?;
        Ok(Self { net, n_agents })
    }

    /// `(|w^i(s)|` for each agent, `b(s))`, each `n×1`.
    pub fn weights(&self, tape: &mut Tape, set: &ParameterSet, states: Var) -> (Vec<Var>, Var) {
        let out = self.net.forward(tape, set, states);
        let w = (0..self.n_agents)
            .map(|i| {
                let c = tape.slice_cols(out, i, i + 1);
                tape.abs(c)
            })
            .collect();
        let b = tape.slice_cols(out, self.n_agents, self.n_agents + 1);
        (w, b)
    }

    pub fn mix(&self, tape: &mut Tape, set: &ParameterSet, states: Var, values: &[Var]) -> Var {
        assert_eq!(values.len(), self.n_agents, "one value per agent");
        let (w, b) = self.weights(tape, set, states);
        let mut acc = b;
        for (wi, &vi) in w.into_iter().zip(values) {
            let term = tape.mul(wi, vi);
            acc = tape.add(acc, term);
        }
        acc
    }
}

/// Centralized value `V(s) = Σ_i |w^i(s)|·V^i(h^i) + b(s)`.
///
/// The per-agent heads read the agents' memory embeddings; only the heads
/// and the mixer live in [`params`](Self::params).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TeamValue {
    pub heads: Vec<Mlp>,
    pub mixer: Mixer,
    pub params: ParameterSet,
}

impl TeamValue {
    /// One head per agent over that agent's `[memory(h), o_t]` features.
    pub fn new(state_dim: usize, obs_dims: &[usize], net: &NetConfig, rng: &mut Rng) -> Result<Self> {
        let n_agents = obs_dims.len();
        let mut params = ParameterSet::new();
        let heads = (0..n_agents)
            .map(|i| Mlp::new(&mut params, &format!("value{i}"), MlpSpec::new(net.embed_dim + obs_dims[i], &net.hidden, 1), rng))
            .collect::<Result<Vec<_>>>()?;
        let mixer = Mixer::new(&mut params, "mixer", state_dim, n_agents, &net.mixer_hidden, rng)?;
        Ok(Self { heads, mixer, params })
    }

    /// Per-agent values `V^i(h^i)`, each `n×1`.
    pub fn agent_values(&self, tape: &mut Tape, set: &ParameterSet, embeddings: &[Var]) -> Vec<Var> {
        self.heads
            .iter()
            .zip(embeddings)
            .map(|(h, &e)| h.forward(tape, set, e))
            .collect()
    }

    pub fn forward(&self, tape: &mut Tape, set: &ParameterSet, embeddings: &[Var], states: Var) -> Var {
        let values = self.agent_values(tape, set, embeddings);
        self.mixer.mix(tape, set, states, &values)
    }
}

/// Borrowed view of every trainable set of a [`Team`], so losses can be
/// evaluated with any one set swapped out.
pub struct TeamParams<'a> {
    pub memory: Vec<&'a ParameterSet>,
    pub actor: Vec<&'a ParameterSet>,
    pub critic: &'a ParameterSet,
}

/// Outputs of one batched acting pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ActOutput {
    /// `actions[row][agent]`.
    pub actions: Vec<Vec<Vec<f64>>>,
    /// `log_probs[row][agent]`.
    pub log_probs: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Agents plus the team value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Team {
    pub env_id: String,
    pub state_dim: usize,
    pub net: NetConfig,
    pub agents: Vec<AgentPolicy>,
    pub value: TeamValue,
}

impl Team {
    pub fn new(spec: &EnvSpec, net: &NetConfig, seed: u64) -> Result<Self> {
        if net.embed_dim == 0 || net.window == 0 {
            return Err(Error::config("embed_dim and window must be >= 1"));
        }
        let mut rng = rng_stream(seed, 7);
        let agents = (0..spec.n_agents)
            .map(|i| AgentPolicy::new(i, spec.obs_dims[i], spec.action_spaces[i], net, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let value = TeamValue::new(spec.state_dim, &spec.obs_dims, net, &mut rng)?;
        Ok(Self {
            env_id: spec.id.clone(),
            state_dim: spec.state_dim,
            net: net.clone(),
            agents,
            value,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn params(&self) -> TeamParams<'_> {
        TeamParams {
            memory: self.agents.iter().map(|a| &a.memory_params).collect(),
            actor: self.agents.iter().map(|a| &a.params).collect(),
            critic: &self.value.params,
        }
    }

    /// Mixed values for a batch; `histories[agent]` holds one row per state.
    pub fn values(&self, states: &[Vec<f64>], histories: &[HistoryBatch]) -> Vec<f64> {
        let mut tape = Tape::new();
        let embs: Vec<Var> = self
            .agents
            .iter()
            .zip(histories)
            .map(|(a, b)| a.embed(&mut tape, &a.memory_params, b))
            .collect();
        let s = tape.leaf(Matrix::from_rows(states, self.state_dim));
        let v = self.value.forward(&mut tape, &self.value.params, &embs, s);
        tape.value(v).data().to_vec()
    }

    /// Sample joint actions (row `r` draws from `rngs[r]`, agents in order)
    /// and record log-probabilities and mixed values.
    pub fn act(&self, states: &[Vec<f64>], histories: &[HistoryBatch], rngs: &mut [Rng]) -> ActOutput {
        let n = states.len();
        let mut tape = Tape::new();
        let embs: Vec<Var> = self
            .agents
            .iter()
            .zip(histories)
            .map(|(a, b)| a.embed(&mut tape, &a.memory_params, b))
            .collect();
        let dists: Vec<Vec<ActionDist>> = self
            .agents
            .iter()
            .zip(&embs)
            .map(|(a, &e)| {
                let d = a.dist_params(&mut tape, &a.params, e);
                a.decode(tape.value(d))
            })
            .collect();
        let s = tape.leaf(Matrix::from_rows(states, self.state_dim));
        let v = self.value.forward(&mut tape, &self.value.params, &embs, s);
        let values = tape.value(v).data().to_vec();

        let mut actions = Vec::with_capacity(n);
        let mut log_probs = Vec::with_capacity(n);
        for (r, rng) in rngs.iter_mut().enumerate().take(n) {
            let mut joint = Vec::with_capacity(self.n_agents());
            let mut lps = Vec::with_capacity(self.n_agents());
            for d in &dists {
                let a = d[r].sample(rng);
                lps.push(d[r].log_prob(&a));
                joint.push(a);
            }
            actions.push(joint);
            log_probs.push(lps);
        }
        ActOutput {
            actions,
            log_probs,
            values,
        }
    }
}

/// Mixed team value of one state and its per-agent histories.
pub fn qmix_value(team: &Team, state: &[f64], histories: &[Vec<f64>]) -> f64 {
    let batches: Vec<HistoryBatch> = team
        .agents
        .iter()
        .zip(histories)
        .map(|(a, h)| {
            let mut b = HistoryBatch::new(a.token_dim());
            b.push(h.clone());
            b
        })
        .collect();
    team.values(&[state.to_vec()], &batches)[0]
}
