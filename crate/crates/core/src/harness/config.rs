use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::baselines::BaselineConfig;
use crate::envs::Env;
use crate::mappo::{NetConfig, PpoConfig};
use crate::rollout::RolloutConfig;
use crate::worldmodel::WorldModelConfig;
use crate::{Error, Result};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "MOMA_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    MomaPpo,
    Ibc,
    Maiql,
    /// MAIQL with one learner over joint observations and actions.
    IqlCentral,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::MomaPpo => "moma-ppo",
            Algorithm::Ibc => "ibc",
            Algorithm::Maiql => "maiql",
            Algorithm::IqlCentral => "iql-central",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.into()))
            .map_err(|_| Error::config(format!("unknown algorithm {s:?}")))
    }
}

/// Everything that determines a training run.
///
/// Written as flat `key = value` lines; nested fields use dotted keys such
/// as `ppo.lr` or `rollout.lambda_g`. Lists are comma-separated, optional
/// values accept `none`. Only `env`, `dataset` and `algorithm` are
/// required; everything else starts from the per-environment defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub dataset: PathBuf,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Run directory; metrics, summary and checkpoints land here.
    pub out_dir: PathBuf,
    /// Ensemble checkpoint to load, or to write after training one.
    pub world_model: Option<PathBuf>,
    /// Step the real simulator instead of the ensemble during rollouts.
    pub ground_truth: bool,
    /// PPO updates for moma-ppo, gradient steps for the baselines.
    pub steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub net: NetConfig,
    pub rollout: RolloutConfig,
    pub ppo: PpoConfig,
    pub wm: WorldModelConfig,
    pub baseline: BaselineConfig,
}

impl ExperimentConfig {
    /// Defaults for `env`, with the budgets of the longer runs.
    pub fn defaults(env: &str, dataset: impl Into<PathBuf>, algorithm: Algorithm) -> Result<Self> {
        let e = Env::from_id(env)?;
        let (steps, eval_every) = match algorithm {
            Algorithm::MomaPpo if e.has_discrete_state() => (5_000, 50),
            Algorithm::MomaPpo => (20_000, 50),
            _ => (100_000, 5_000),
        };
        Ok(Self {
            env: env.into(),
            dataset: dataset.into(),
            algorithm,
            seed: 0,
            out_dir: PathBuf::from("runs").join(algorithm.name()),
            world_model: None,
            ground_truth: false,
            steps,
            eval_every,
            eval_episodes: 100,
            net: NetConfig::default(),
            rollout: RolloutConfig::default(),
            ppo: PpoConfig::for_env(&e),
            wm: WorldModelConfig::for_env(&e),
            baseline: BaselineConfig::default(),
        })
    }

    /// Parse the `key = value` text. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let get = |key: &str| {
            pairs
                .iter()
                .rev()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::config(format!("missing required key {key:?}")))
        };
        let base = Self::defaults(&get("env")?, get("dataset")?, get("algorithm")?.parse()?)?;
        let mut tree = serde_json::to_value(&base)?;
        for (k, v) in &pairs {
            set_path(&mut tree, k, v)?;
        }
        let cfg: Self = serde_json::from_value(tree).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file and apply the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        Ok(cfg)
    }

    /// Render as `key = value` lines that [`ExperimentConfig::parse`] reads
    /// back to the same value.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        flatten("", &serde_json::to_value(self)?, &mut out);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let env = Env::from_id(&self.env)?;
        if self.steps == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(Error::config("steps, eval_every and eval_episodes must be >= 1"));
        }
        if self.algorithm == Algorithm::IqlCentral && env.spec().n_agents < 2 {
            return Err(Error::config("iql-central needs a multi-agent environment"));
        }
        self.rollout.validate()?;
        self.ppo.validate()?;
        self.wm.validate()?;
        self.baseline.validate()
    }

    /// Digest of every field except the seed and the run directory, so
    /// seeds of one experiment share it.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        c.out_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

fn parse_value(current: &Value, raw: &str) -> Value {
    if raw.eq_ignore_ascii_case("none") {
        return Value::Null;
    }
    if current.is_string() {
        return Value::String(raw.into());
    }
    if current.is_array() {
        let items = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.into())))
            .collect();
        return Value::Array(items);
    }
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()))
}

fn set_path(tree: &mut Value, key: &str, raw: &str) -> Result<()> {
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| Error::config(format!("unknown config key {key:?}")))?;
    }
    if node.is_object() {
        return Err(Error::config(format!("config key {key:?} names a group, not a value")));
    }
    *node = parse_value(node, raw);
    Ok(())
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("{prefix} = {}\n", parts.join(",")));
        }
        Value::Null => out.push_str(&format!("{prefix} = none\n")),
        Value::String(s) => out.push_str(&format!("{prefix} = {s}\n")),
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "env = coordgame-v0\ndataset = data/fav.txt\nalgorithm = moma-ppo\n";

    #[test]
    fn minimal_file_takes_env_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.algorithm, Algorithm::MomaPpo);
        assert_eq!(c.ppo.entropy_target, 0.3);
        assert_eq!(c.steps, 5_000);
        assert_eq!(c.eval_episodes, 100);
        assert_eq!(c.rollout.horizon, 10);
    }

    #[test]
    fn dotted_keys_and_lists_override() {
        let text = format!(
            "{MINIMAL}# comment\nppo.lr = 1e-3\nnet.hidden = 32, 16\nrollout.l_eps = 0.5\nrollout.adaptive_termination = false\nwm.l_eps = none\nground_truth = true  # trailing\nseed = 4\n"
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(c.ppo.lr, 1e-3);
        assert_eq!(c.net.hidden, vec![32, 16]);
        assert_eq!(c.rollout.l_eps, Some(0.5));
        assert!(!c.rollout.adaptive_termination);
        assert!(c.ground_truth);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn text_round_trips() {
        let mut c = ExperimentConfig::parse(MINIMAL).unwrap();
        c.rollout.l_eps = Some(0.25);
        c.net.hidden = vec![8];
        assert_eq!(ExperimentConfig::parse(&c.to_text().unwrap()).unwrap(), c);
    }

    #[test]
    fn bad_files_are_rejected() {
        for text in [
            format!("{MINIMAL}ppo.nonsense = 1\n"),
            format!("{MINIMAL}ppo = 1\n"),
            format!("{MINIMAL}ppo.lr = fast\n"),
            format!("{MINIMAL}steps = 0\n"),
            format!("{MINIMAL}no equals sign\n"),
            "env = coordgame-v0\nalgorithm = ibc\n".to_string(),
            "env = coordgame-v0\ndataset = x\nalgorithm = dqn\n".to_string(),
        ] {
            assert!(matches!(ExperimentConfig::parse(&text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_ignores_seed_and_run_dir() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 9;
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.ppo.clip = 0.3;
        assert_ne!(a.hash(), b.hash());
    }
}
