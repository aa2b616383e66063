use serde::{Deserialize, Serialize};

use super::data::{sample_batch, AgentView, DatasetBatch};
use super::BaselineConfig;
use crate::dataset::OfflineDataset;
use crate::envs::ActionSpace;
use crate::mappo::{Mixer, Team, TeamParams};
use crate::nn::{clip_grad_norm, Adam, AdamConfig, Gradients, HistoryBatch, Matrix, Mlp, MlpSpec, ParameterSet, Tape, Var};
use crate::{rng_stream, Error, Result, Rng};

/// Asymmetric squared loss `|e − 1[d < 0]|·d²`.
pub fn expectile_loss(diff: f64, e: f64) -> f64 {
    let w = if diff < 0.0 { (e - 1.0).abs() } else { e };
    w * diff * diff
}

/// `target ← (1 − τ)·target + τ·online`.
pub fn polyak_update(online: &ParameterSet, target: &mut ParameterSet, tau: f64) {
    target.polyak_toward(online, tau);
}

/// Exponential advantage weight, clamped; the flag reports clamping.
pub fn awr_weight(exponent: f64, clamp: f64) -> (f64, bool) {
    if exponent >= clamp.ln() {
        (clamp, true)
    } else {
        (exponent.exp(), false)
    }
}

/// `[memory(h), o_t]` features of every agent under the given memories.
pub fn agent_features(tape: &mut Tape, team: &Team, memories: &[&ParameterSet], histories: &[HistoryBatch]) -> Vec<Var> {
    team.agents
        .iter()
        .enumerate()
        .map(|(i, a)| a.embed(tape, memories[i], &histories[i]))
        .collect()
}

fn encode_actions(space: ActionSpace, actions: &[Vec<f64>]) -> Matrix {
    let mut data = Vec::with_capacity(actions.len() * space.encoded_dim());
    for a in actions {
        space.encode(a, &mut data);
    }
    Matrix::from_vec(actions.len(), space.encoded_dim(), data)
}

fn state_leaf(tape: &mut Tape, team: &Team, states: &[Vec<f64>]) -> Var {
    tape.leaf(Matrix::from_rows(states, team.state_dim))
}

fn team_memories(team: &Team) -> Vec<&ParameterSet> {
    team.agents.iter().map(|a| &a.memory_params).collect()
}

/// Per-agent action-value heads, with twin heads sharing one mixer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QNet {
    /// `heads[twin][agent]`, input `[features, enc(a)]`.
    pub heads: Vec<Vec<Mlp>>,
    pub mixer: Mixer,
    pub spaces: Vec<ActionSpace>,
}

/// Per-agent state-value heads and their mixer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VNet {
    pub heads: Vec<Mlp>,
    pub mixer: Mixer,
}

impl QNet {
    pub fn new(set: &mut ParameterSet, team: &Team, twins: usize, rng: &mut Rng) -> Result<Self> {
        let heads = (0..twins)
            .map(|k| {
                team.agents
                    .iter()
                    .map(|a| {
                        let spec = MlpSpec::new(a.feature_dim() + a.space.encoded_dim(), &team.net.hidden, 1);
                        Mlp::new(set, &format!("q{k}.{}", a.index), spec, rng)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mixer = Mixer::new(set, "q.mixer", team.state_dim, team.n_agents(), &team.net.mixer_hidden, rng)?;
        Ok(Self {
            heads,
            mixer,
            spaces: team.agents.iter().map(|a| a.space).collect(),
        })
    }

    /// `Q_k^i(h^i, a^i)` as `[twin][agent]` columns.
    pub fn agent_q(&self, tape: &mut Tape, set: &ParameterSet, features: &[Var], actions: &[Vec<Vec<f64>>]) -> Vec<Vec<Var>> {
        let inputs: Vec<Var> = features
            .iter()
            .enumerate()
            .map(|(i, &f)| {
                let a = tape.leaf(encode_actions(self.spaces[i], &actions[i]));
                tape.concat_cols(&[f, a])
            })
            .collect();
        self.heads
            .iter()
            .map(|twin| twin.iter().zip(&inputs).map(|(h, &x)| h.forward(tape, set, x)).collect())
            .collect()
    }
}

impl VNet {
    pub fn new(set: &mut ParameterSet, team: &Team, rng: &mut Rng) -> Result<Self> {
        let heads = team
            .agents
            .iter()
            .map(|a| Mlp::new(set, &format!("v.{}", a.index), MlpSpec::new(a.feature_dim(), &team.net.hidden, 1), rng))
            .collect::<Result<Vec<_>>>()?;
        let mixer = Mixer::new(set, "v.mixer", team.state_dim, team.n_agents(), &team.net.mixer_hidden, rng)?;
        Ok(Self { heads, mixer })
    }

    pub fn agent_v(&self, tape: &mut Tape, set: &ParameterSet, features: &[Var]) -> Vec<Var> {
        self.heads.iter().zip(features).map(|(h, &f)| h.forward(tape, set, f)).collect()
    }
}

/// Squared Bellman error of every twin against fixed targets.
pub fn q_loss(
    tape: &mut Tape,
    team: &Team,
    memories: &[&ParameterSet],
    q: &QNet,
    set: &ParameterSet,
    batch: &DatasetBatch,
    targets: &[f64],
) -> Var {
    let feats = agent_features(tape, team, memories, &batch.histories);
    let per = q.agent_q(tape, set, &feats, &batch.actions);
    let s = state_leaf(tape, team, &batch.states);
    let y = tape.leaf(Matrix::column(targets));
    let terms: Vec<Var> = per
        .iter()
        .map(|twin| {
            let qt = q.mixer.mix(tape, set, s, twin);
            let d = tape.sub(qt, y);
            let sq = tape.square(d);
            tape.mean_all(sq)
        })
        .collect();
    tape.sum_vars(&terms)
}

/// Expectile regression of the mixed `V(s)` toward fixed `Q̂(s, a)`.
#[allow(clippy::too_many_arguments)]
pub fn expectile_value_loss(
    tape: &mut Tape,
    team: &Team,
    memories: &[&ParameterSet],
    v: &VNet,
    set: &ParameterSet,
    batch: &DatasetBatch,
    q_hat: &[f64],
    e: f64,
) -> Var {
    let feats = agent_features(tape, team, memories, &batch.histories);
    let per = v.agent_v(tape, set, &feats);
    let s = state_leaf(tape, team, &batch.states);
    let vt = v.mixer.mix(tape, set, s, &per);
    let q = tape.leaf(Matrix::column(q_hat));
    let d = tape.sub(q, vt);
    let w: Vec<f64> = tape.value(d).data().iter().map(|&x| if x < 0.0 { (e - 1.0).abs() } else { e }).collect();
    let w = tape.leaf(Matrix::column(&w));
    let sq = tape.square(d);
    let l = tape.mul(w, sq);
    tape.mean_all(l)
}

/// Weighted likelihood `−mean(w · Σ_j log π_j(a^j | h^j))`.
pub fn awr_loss(tape: &mut Tape, team: &Team, params: &TeamParams, batch: &DatasetBatch, weights: &[f64]) -> Var {
    let mut lps = Vec::with_capacity(team.n_agents());
    for (i, agent) in team.agents.iter().enumerate() {
        let emb = agent.embed(tape, params.memory[i], &batch.histories[i]);
        let dist = agent.dist_params(tape, params.actor[i], emb);
        lps.push(agent.log_prob(tape, dist, &batch.actions[i]));
    }
    let total = tape.sum_vars(&lps);
    let w = tape.leaf(Matrix::column(weights));
    let weighted = tape.mul(w, total);
    let m = tape.mean_all(weighted);
    tape.neg(m)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaiqlReport {
    pub q_loss: f64,
    pub v_loss: f64,
    pub policy_loss: f64,
    /// Fraction of rows whose advantage weight hit the clamp.
    pub clamped_fraction: f64,
}

/// Multi-agent IQL: mixed twin `Q`, expectile-regressed mixed `V`, and
/// factorized advantage-weighted policy extraction. With a single learner
/// over joint observations and actions it is centralized IQL.
///
/// Each agent's memory is shared by its policy, `Q` and `V` heads and
/// receives the gradients of all three losses. It takes one step per
/// iteration, after the heads, so all three losses see the same memory. The
/// target `Q` reads Polyak-tracked copies of the memories.
#[derive(Clone, Debug)]
pub struct Maiql {
    pub config: BaselineConfig,
    pub view: AgentView,
    pub q: QNet,
    pub q_params: ParameterSet,
    pub q_target: ParameterSet,
    pub target_memory: Vec<ParameterSet>,
    pub v: VNet,
    pub v_params: ParameterSet,
    q_opt: Adam,
    v_opt: Adam,
    pi_opts: Vec<Adam>,
    memory_opts: Vec<Adam>,
    /// Total clamped advantage weights so far.
    pub clamped: u64,
}

/// Target-network quantities for a batch.
struct TargetTerms {
    /// `ŵ_Q^i·min_k Q̂_k^i` per agent, per row.
    agent: Vec<Vec<f64>>,
    bias: Vec<f64>,
    total: Vec<f64>,
}

impl Maiql {
    pub fn new(team: &Team, config: BaselineConfig, view: AgentView, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_stream(seed, 41);
        let mut q_params = ParameterSet::new();
        let q = QNet::new(&mut q_params, team, if config.twin_q { 2 } else { 1 }, &mut rng)?;
        let mut v_params = ParameterSet::new();
        let v = VNet::new(&mut v_params, team, &mut rng)?;
        let lr = AdamConfig::with_lr(config.lr);
        Ok(Self {
            q_opt: Adam::new(&q_params, lr),
            v_opt: Adam::new(&v_params, lr),
            pi_opts: team.agents.iter().map(|a| Adam::new(&a.params, lr)).collect(),
            memory_opts: team
                .agents
                .iter()
                .map(|a| Adam::new(&a.memory_params, AdamConfig::with_lr(config.memory_lr)))
                .collect(),
            target_memory: team.agents.iter().map(|a| a.memory_params.clone()).collect(),
            q_target: q_params.clone(),
            config,
            view,
            q,
            q_params,
            v,
            v_params,
            clamped: 0,
        })
    }

    /// Mixed `V(s)` per row as plain numbers.
    pub fn values(&self, team: &Team, histories: &[HistoryBatch], states: &[Vec<f64>]) -> Vec<f64> {
        let mut tape = Tape::new();
        let feats = agent_features(&mut tape, team, &team_memories(team), histories);
        let per = self.v.agent_v(&mut tape, &self.v_params, &feats);
        let s = state_leaf(&mut tape, team, states);
        let out = self.v.mixer.mix(&mut tape, &self.v_params, s, &per);
        tape.value(out).data().to_vec()
    }

    fn target_terms(&self, team: &Team, batch: &DatasetBatch) -> TargetTerms {
        let mut tape = Tape::new();
        let mems: Vec<&ParameterSet> = self.target_memory.iter().collect();
        let feats = agent_features(&mut tape, team, &mems, &batch.histories);
        let per = self.q.agent_q(&mut tape, &self.q_target, &feats, &batch.actions);
        let s = state_leaf(&mut tape, team, &batch.states);
        let (w, b) = self.q.mixer.weights(&mut tape, &self.q_target, s);
        let n = batch.len();
        let agent: Vec<Vec<f64>> = (0..self.q.mixer.n_agents)
            .map(|i| {
                let wi = tape.value(w[i]).data();
                (0..n)
                    .map(|r| {
                        let qmin = per.iter().map(|twin| tape.value(twin[i]).get(r, 0)).fold(f64::INFINITY, f64::min);
                        wi[r] * qmin
                    })
                    .collect()
            })
            .collect();
        let bias = tape.value(b).data().to_vec();
        let total = (0..n).map(|r| bias[r] + agent.iter().map(|a| a[r]).sum::<f64>()).collect();
        TargetTerms { agent, bias, total }
    }

    /// Advantage weights from the target `Q` and the current `V`:
    /// `exp(b̂_Q − b_V)·Π_i exp(β·(ŵ_Q^i·Q̂^i − w_V^i·V^i))`, clamped.
    fn advantage_weights(&self, team: &Team, batch: &DatasetBatch, target: &TargetTerms) -> (Vec<f64>, usize) {
        let mut tape = Tape::new();
        let feats = agent_features(&mut tape, team, &team_memories(team), &batch.histories);
        let per = self.v.agent_v(&mut tape, &self.v_params, &feats);
        let s = state_leaf(&mut tape, team, &batch.states);
        let (w, b) = self.v.mixer.weights(&mut tape, &self.v_params, s);
        let mut clamped = 0;
        let weights = (0..batch.len())
            .map(|r| {
                let mut x = target.bias[r] - tape.value(b).get(r, 0);
                for i in 0..per.len() {
                    let wv = tape.value(w[i]).get(r, 0) * tape.value(per[i]).get(r, 0);
                    x += self.config.beta * (target.agent[i][r] - wv);
                }
                let (wt, c) = awr_weight(x, self.config.weight_clamp);
                clamped += usize::from(c);
                wt
            })
            .collect();
        (weights, clamped)
    }

    /// One iteration: `Q`, `V` and policy heads in that order, then the
    /// shared memories, then the targets.
    pub fn step(&mut self, team: &mut Team, batch: &DatasetBatch) -> Result<MaiqlReport> {
        let cfg = self.config.clone();
        let check = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numeric(format!("non-finite MAIQL {name} loss {v}")))
            }
        };
        let to_memories = |tape: &Tape, grads: &Gradients, team: &mut Team| {
            for a in &mut team.agents {
                tape.accumulate_into(grads, &mut a.memory_params);
            }
        };
        for a in &mut team.agents {
            a.memory_params.zero_grad();
        }

        let v_next = self.values(team, &batch.next_histories, &batch.next_states);
        let y: Vec<f64> = (0..batch.len())
            .map(|r| batch.rewards[r] + cfg.gamma * batch.masks[r] * v_next[r])
            .collect();
        let mut tape = Tape::new();
        let loss = q_loss(&mut tape, team, &team_memories(team), &self.q, &self.q_params, batch, &y);
        let q_value = check("Q", tape.scalar(loss))?;
        let grads = tape.backward(loss);
        self.q_params.zero_grad();
        tape.accumulate_into(&grads, &mut self.q_params);
        to_memories(&tape, &grads, team);
        clip_grad_norm(&mut self.q_params, cfg.max_grad_norm);
        self.q_opt.step(&mut self.q_params)?;

        let target = self.target_terms(team, batch);
        let mut tape = Tape::new();
        let loss = expectile_value_loss(&mut tape, team, &team_memories(team), &self.v, &self.v_params, batch, &target.total, cfg.expectile);
        let v_value = check("V", tape.scalar(loss))?;
        let grads = tape.backward(loss);
        self.v_params.zero_grad();
        tape.accumulate_into(&grads, &mut self.v_params);
        to_memories(&tape, &grads, team);
        clip_grad_norm(&mut self.v_params, cfg.max_grad_norm);
        self.v_opt.step(&mut self.v_params)?;

        let (weights, clamped) = self.advantage_weights(team, batch, &target);
        self.clamped += clamped as u64;
        let mut tape = Tape::new();
        let loss = awr_loss(&mut tape, team, &team.params(), batch, &weights);
        let pi_value = check("policy", tape.scalar(loss))?;
        let grads = tape.backward(loss);
        to_memories(&tape, &grads, team);
        for (a, opt) in team.agents.iter_mut().zip(self.pi_opts.iter_mut()) {
            a.params.zero_grad();
            tape.accumulate_into(&grads, &mut a.params);
            clip_grad_norm(&mut a.params, cfg.max_grad_norm);
            opt.step(&mut a.params)?;
        }

        for ((a, opt), target) in team.agents.iter_mut().zip(self.memory_opts.iter_mut()).zip(self.target_memory.iter_mut()) {
            clip_grad_norm(&mut a.memory_params, cfg.max_grad_norm);
            opt.step(&mut a.memory_params)?;
            polyak_update(&a.memory_params, target, cfg.tau);
        }
        polyak_update(&self.q_params, &mut self.q_target, cfg.tau);
        Ok(MaiqlReport {
            q_loss: q_value,
            v_loss: v_value,
            policy_loss: pi_value,
            clamped_fraction: clamped as f64 / batch.len() as f64,
        })
    }
}

/// Train `team`'s policies with MAIQL for `steps` minibatches.
pub fn maiql_train(ds: &OfflineDataset, team: &mut Team, steps: usize, config: &BaselineConfig, seed: u64) -> Result<Vec<MaiqlReport>> {
    let view = if team.n_agents() == 1 && ds.meta.n_agents > 1 {
        AgentView::Joint
    } else {
        AgentView::Decentralized
    };
    let mut learner = Maiql::new(team, config.clone(), view, seed)?;
    let mut rng = rng_stream(seed, 43);
    (0..steps)
        .map(|_| {
            let batch = sample_batch(ds, view, team.net.window, config.batch_size, &mut rng);
            learner.step(team, &batch)
        })
        .collect()
}
