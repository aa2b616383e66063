use super::data::{sample_batch, AgentView, DatasetBatch};
use super::BaselineConfig;
use crate::dataset::OfflineDataset;
use crate::mappo::{Team, TeamParams};
use crate::nn::{Adam, AdamConfig, Tape, Var};
use crate::{rng_stream, Error, Result};

/// `−mean_rows Σ_i log π_i(a^i | h^i)`.
pub fn ibc_loss(tape: &mut Tape, team: &Team, params: &TeamParams, batch: &DatasetBatch) -> Var {
    let mut terms = Vec::with_capacity(team.n_agents());
    for (i, agent) in team.agents.iter().enumerate() {
        let emb = agent.embed(tape, params.memory[i], &batch.histories[i]);
        let dist = agent.dist_params(tape, params.actor[i], emb);
        let lp = agent.log_prob(tape, dist, &batch.actions[i]);
        let lp = tape.mean_all(lp);
        terms.push(tape.neg(lp));
    }
    tape.sum_vars(&terms)
}

/// Independent behavioral cloning: each agent maximizes the likelihood of
/// its own dataset actions given its own history.
#[derive(Clone, Debug)]
pub struct IbcTrainer {
    pub config: BaselineConfig,
    pub view: AgentView,
    opts: Vec<(Adam, Adam)>,
}

impl IbcTrainer {
    pub fn new(team: &Team, config: BaselineConfig, view: AgentView) -> Result<Self> {
        config.validate()?;
        let opts = team
            .agents
            .iter()
            .map(|a| {
                (
                    Adam::new(&a.memory_params, AdamConfig::with_lr(config.memory_lr)),
                    Adam::new(&a.params, AdamConfig::with_lr(config.lr)),
                )
            })
            .collect();
        Ok(Self { config, view, opts })
    }

    pub fn step(&mut self, team: &mut Team, batch: &DatasetBatch) -> Result<f64> {
        let mut tape = Tape::new();
        let loss = ibc_loss(&mut tape, team, &team.params(), batch);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite behavioral cloning loss {value}")));
        }
        let grads = tape.backward(loss);
        for (a, (mo, po)) in team.agents.iter_mut().zip(self.opts.iter_mut()) {
            a.memory_params.zero_grad();
            a.params.zero_grad();
            tape.accumulate_into(&grads, &mut a.memory_params);
            tape.accumulate_into(&grads, &mut a.params);
            crate::nn::clip_grad_norm_all(&mut [&mut a.memory_params, &mut a.params], self.config.max_grad_norm);
            mo.step(&mut a.memory_params)?;
            po.step(&mut a.params)?;
        }
        Ok(value)
    }
}

/// Train `team` by behavioral cloning for `steps` minibatches; returns the
/// loss of every step.
pub fn ibc_train(ds: &OfflineDataset, team: &mut Team, steps: usize, config: &BaselineConfig, seed: u64) -> Result<Vec<f64>> {
    let view = if team.n_agents() == 1 && ds.meta.n_agents > 1 {
        AgentView::Joint
    } else {
        AgentView::Decentralized
    };
    let mut trainer = IbcTrainer::new(team, config.clone(), view)?;
    let mut rng = rng_stream(seed, 31);
    (0..steps)
        .map(|_| {
            let batch = sample_batch(ds, view, team.net.window, config.batch_size, &mut rng);
            trainer.step(team, &batch)
        })
        .collect()
}
