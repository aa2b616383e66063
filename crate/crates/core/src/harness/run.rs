use std::fs::{self, File};
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::eval::{evaluate, Evaluation};
use crate::baselines::{joint_spec, sample_batch, AgentView, IbcTrainer, Maiql};
use crate::dataset::{self, OfflineDataset};
use crate::envs::Env;
use crate::mappo::{ppo_update, save_team, PpoLearner, Team};
use crate::rollout::{generate_rollouts, RolloutBuffer};
use crate::worldmodel::{load_ensemble, save_ensemble, train_ensemble, Dynamics, GroundTruth};
use crate::{rng_stream, Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TEAM_FILE: &str = "team.txt";
pub const WORLD_MODEL_FILE: &str = "world_model.txt";

/// Header of the metrics file. Columns that do not apply to an algorithm
/// are left empty.
pub const METRICS_HEADER: &str = "step,eval_mean,eval_sem,normalized,convention_consistency,\
actor_loss,critic_loss,entropy,alpha,approx_kl,clip_fraction,q_loss,v_loss,policy_loss,clamped_fraction,\
rollout_mean_length,truncation_fraction,mean_eps_g";

/// Stream offsets of the run's random sources.
const STREAM_MASTER: u64 = 11;
const STREAM_EVAL: u64 = 13;

/// Final record of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub env: String,
    /// Behaviour tags of the dataset, joined with `+`.
    pub dataset: String,
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub final_eval: Evaluation,
}

/// Per-row diagnostics averaged since the previous row.
#[derive(Default)]
struct Accumulator {
    sums: Vec<f64>,
    n: usize,
}

impl Accumulator {
    fn add(&mut self, values: &[f64]) {
        if self.sums.is_empty() {
            self.sums = vec![0.0; values.len()];
        }
        for (s, v) in self.sums.iter_mut().zip(values) {
            *s += v;
        }
        self.n += 1;
    }

    fn take(&mut self) -> Vec<f64> {
        let n = self.n.max(1) as f64;
        let out = self.sums.iter().map(|s| s / n).collect();
        *self = Self::default();
        out
    }
}

/// Append-only metrics writer; every row is flushed so a failed run keeps
/// its partial log.
pub struct MetricsLog {
    out: BufWriter<File>,
    last_step: Option<usize>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(Self { out, last_step: None })
    }

    /// `fields` follow the header after `step`; `None` renders empty.
    pub fn row(&mut self, step: usize, fields: &[Option<f64>]) -> Result<()> {
        if self.last_step.is_some_and(|s| s >= step) {
            return Err(Error::config("metrics rows must have increasing steps"));
        }
        let n_cols = METRICS_HEADER.split(',').count();
        if fields.len() + 1 != n_cols {
            return Err(Error::config("metrics row does not match the header"));
        }
        let mut line = step.to_string();
        for f in fields {
            line.push(',');
            if let Some(v) = f {
                line.push_str(&format!("{v:.6}"));
            }
        }
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        self.last_step = Some(step);
        Ok(())
    }
}

fn eval_fields(e: &Evaluation) -> [Option<f64>; 4] {
    [Some(e.mean), Some(e.sem), Some(e.normalized), e.convention_consistency]
}

/// Spec of the learners for `algorithm` on `env`.
fn learner_spec(env: &Env, algorithm: Algorithm) -> Result<crate::envs::EnvSpec> {
    match algorithm {
        Algorithm::IqlCentral => joint_spec(&env.spec()),
        _ => Ok(env.spec()),
    }
}

/// Load the ensemble named by the config, or train one (and save it there
/// and in the run directory).
pub fn world_model(config: &ExperimentConfig, ds: &OfflineDataset) -> Result<crate::worldmodel::WorldModelEnsemble> {
    if let Some(p) = &config.world_model {
        if p.exists() {
            let ens = load_ensemble(p)?;
            if ens.env_id != ds.meta.env_id {
                return Err(Error::config(format!("{} models {}, not {}", p.display(), ens.env_id, ds.meta.env_id)));
            }
            return Ok(ens);
        }
    }
    let ens = train_ensemble(ds, &config.wm, config.seed)?;
    if let Some(p) = &config.world_model {
        save_ensemble(&ens, p)?;
    }
    Ok(ens)
}

/// Train the configured algorithm, logging to `out_dir/metrics.csv` and
/// finishing with `summary.json` and `team.txt`.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    let env = Env::from_id(&config.env)?;
    if !config.dataset.exists() {
        return Err(Error::config(format!("dataset {} does not exist", config.dataset.display())));
    }
    let ds = dataset::load(&config.dataset)?;
    if ds.meta.env_id != config.env {
        return Err(Error::config(format!("dataset is for {}, config says {}", ds.meta.env_id, config.env)));
    }
    fs::create_dir_all(&config.out_dir)?;
    let mut log = MetricsLog::create(&config.out_dir.join(METRICS_FILE))?;
    let mut team = Team::new(&learner_spec(&env, config.algorithm)?, &config.net, config.seed)?;
    let eval_seed = rng_stream(config.seed, STREAM_EVAL).random::<u64>();
    let norm = ds.meta.normalizers;
    let due = |step: usize| step.is_multiple_of(config.eval_every) || step == config.steps;

    let final_eval = match config.algorithm {
        Algorithm::MomaPpo => {
            let ensemble;
            let gt;
            let dynamics: &dyn Dynamics = if config.ground_truth {
                gt = GroundTruth { env: env.clone() };
                &gt
            } else {
                ensemble = world_model(config, &ds)?;
                save_ensemble(&ensemble, &config.out_dir.join(WORLD_MODEL_FILE))?;
                &ensemble
            };
            let mut learner = PpoLearner::new(&team, config.ppo.clone())?;
            let mut master = rng_stream(config.seed, STREAM_MASTER);
            let mut acc = Accumulator::default();
            let mut last = None;
            for u in 1..=config.steps {
                let mut buffer: Option<RolloutBuffer> = None;
                while buffer.as_ref().map_or(0, RolloutBuffer::n_transitions) < config.ppo.transitions_per_update {
                    let b = generate_rollouts(&ds, &env, &team, dynamics, &config.rollout, master.random(), u as u64)?;
                    match &mut buffer {
                        Some(acc) => acc.rollouts.extend(b.rollouts),
                        None => buffer = Some(b),
                    }
                }
                let buffer = buffer.expect("at least one rollout batch");
                let r = ppo_update(&mut learner, &mut team, &buffer, &mut rng_stream(master.random(), 0))?;
                acc.add(&[
                    r.actor,
                    r.critic,
                    r.entropy,
                    r.alpha,
                    r.approx_kl,
                    r.clip_fraction,
                    buffer.mean_length(),
                    buffer.truncation_fraction(),
                    buffer.mean_eps_g(),
                ]);
                if due(u) {
                    let e = evaluate(&env, &team, config.eval_episodes, eval_seed, norm)?;
                    let d = acc.take();
                    let mut fields: Vec<Option<f64>> = eval_fields(&e).to_vec();
                    fields.extend(d[..6].iter().map(|&x| Some(x)));
                    fields.extend([None; 4]);
                    fields.extend(d[6..].iter().map(|&x| Some(x)));
                    log.row(u, &fields)?;
                    last = Some(e);
                }
            }
            last.expect("the final step is always evaluated")
        }
        Algorithm::Ibc | Algorithm::Maiql | Algorithm::IqlCentral => {
            let view = if config.algorithm == Algorithm::IqlCentral {
                AgentView::Joint
            } else {
                AgentView::Decentralized
            };
            let mut rng = rng_stream(config.seed, STREAM_MASTER);
            let mut acc = Accumulator::default();
            let mut last = None;
            enum Trainer {
                Ibc(IbcTrainer),
                Iql(Box<Maiql>),
            }
            let mut trainer = match config.algorithm {
                Algorithm::Ibc => Trainer::Ibc(IbcTrainer::new(&team, config.baseline.clone(), view)?),
                _ => Trainer::Iql(Box::new(Maiql::new(&team, config.baseline.clone(), view, config.seed)?)),
            };
            for step in 1..=config.steps {
                let batch = sample_batch(&ds, view, config.net.window, config.baseline.batch_size, &mut rng);
                match &mut trainer {
                    Trainer::Ibc(t) => acc.add(&[t.step(&mut team, &batch)?]),
                    Trainer::Iql(m) => {
                        let r = m.step(&mut team, &batch)?;
                        acc.add(&[r.q_loss, r.v_loss, r.policy_loss, r.clamped_fraction]);
                    }
                }
                if due(step) {
                    let e = evaluate(&env, &team, config.eval_episodes, eval_seed, norm)?;
                    let d = acc.take();
                    let mut fields: Vec<Option<f64>> = eval_fields(&e).to_vec();
                    fields.extend([None; 6]);
                    match trainer {
                        Trainer::Ibc(_) => fields.extend([None, None, Some(d[0]), None]),
                        Trainer::Iql(_) => fields.extend(d.iter().map(|&x| Some(x))),
                    }
                    fields.extend([None; 3]);
                    log.row(step, &fields)?;
                    last = Some(e);
                }
            }
            last.expect("the final step is always evaluated")
        }
    };

    save_team(&team, config.algorithm.name(), &config.hash(), &config.out_dir.join(TEAM_FILE))?;
    let summary = RunSummary {
        algorithm: config.algorithm,
        env: config.env.clone(),
        dataset: ds.meta.behaviors.join("+"),
        config_hash: config.hash(),
        seed: config.seed,
        steps: config.steps,
        final_eval,
    };
    fs::write(config.out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}

/// Collect a dataset with a named behaviour mixture and write it.
pub fn gen_data(env_id: &str, behavior: &str, episodes: usize, seed: u64, path: &Path) -> Result<OfflineDataset> {
    let env = Env::from_id(env_id)?;
    let policies = dataset::behavior_policies(&env, behavior)?;
    let ds = dataset::collect(&env, &policies, episodes, seed, dataset::reference_normalizers(&env, seed))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    dataset::save(&ds, path)?;
    Ok(ds)
}

/// Read a run's summary.
pub fn load_summary(run_dir: &Path) -> Result<RunSummary> {
    let path: PathBuf = if run_dir.is_dir() { run_dir.join(SUMMARY_FILE) } else { run_dir.to_path_buf() };
    Ok(serde_json::from_str(&fs::read_to_string(&path)?)?)
}
