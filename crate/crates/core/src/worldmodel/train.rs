use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Normalization, WorldModelEnsemble};
use crate::dataset::OfflineDataset;
use crate::envs::Env;
use crate::nn::{Adam, AdamConfig, Matrix, Mlp, MlpSpec, ParameterSet, Tape, LOG_STD_MAX, LOG_STD_MIN};
use crate::{parallel, rng_stream, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModelConfig {
    pub n_members: usize,
    pub n_elites: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    /// `l_ε` = this factor × the 95th percentile of validation `ε_g`.
    pub l_eps_scale: f64,
    /// Fixed `l_ε`, overriding the calibrated value.
    pub l_eps: Option<f64>,
    pub project_one_hot: bool,
    /// Training attempts per member before giving up on divergence.
    pub max_attempts: usize,
}

impl WorldModelConfig {
    pub fn for_env(env: &Env) -> Self {
        let hidden = if env.has_discrete_state() {
            vec![128, 128]
        } else {
            vec![1024; 4]
        };
        Self {
            n_members: 7,
            n_elites: 5,
            hidden,
            lr: 3e-5,
            steps: 20_000,
            batch_size: 256,
            val_fraction: 0.1,
            l_eps_scale: 5.0,
            l_eps: None,
            project_one_hot: env.has_discrete_state(),
            max_attempts: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_elites < 2 || self.n_elites > self.n_members {
            return Err(Error::config("need 2 <= n_elites <= n_members"));
        }
        if self.steps == 0 || self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::config("world model steps, batch size and lr must be positive"));
        }
        if let Some(l) = self.l_eps {
            if !(l > 0.0) {
                return Err(Error::config("l_eps must be positive"));
            }
        }
        Ok(())
    }
}

/// Flattened transitions: inputs `[s, enc(a)]`, targets `[s′ − s, r]`,
/// termination labels.
pub(crate) struct TransitionArrays {
    pub x: Matrix,
    pub y: Matrix,
    pub done: Vec<f64>,
}

pub(crate) fn transition_arrays(ds: &OfflineDataset, env: &Env) -> TransitionArrays {
    let spaces = env.spec().action_spaces;
    let d = ds.meta.state_dim;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut done = Vec::new();
    let mut rows = 0;
    for tr in &ds.trajectories {
        for (t, st) in tr.steps.iter().enumerate() {
            x.extend_from_slice(&st.state);
            for (sp, a) in spaces.iter().zip(&st.action) {
                sp.encode(a, &mut x);
            }
            let next = tr.next_state(t);
            y.extend((0..d).map(|c| next[c] - st.state[c]));
            y.push(st.reward);
            done.push(if st.done { 1.0 } else { 0.0 });
            rows += 1;
        }
    }
    let in_dim = x.len() / rows;
    TransitionArrays {
        x: Matrix::from_vec(rows, in_dim, x),
        y: Matrix::from_vec(rows, d + 1, y),
        done,
    }
}

fn gather_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(m.row(i));
    }
    out
}

/// Fit the ensemble. Members train independently, each from its own
/// random stream, and may run in parallel.
pub fn train_ensemble(ds: &OfflineDataset, config: &WorldModelConfig, seed: u64) -> Result<WorldModelEnsemble> {
    config.validate()?;
    let env = ds.env()?;
    let spec = env.spec();
    let (train, val) = ds.split(config.val_fraction, &mut rng_stream(seed, 0))?;
    let tr = transition_arrays(&train, &env);
    let va = transition_arrays(&val, &env);
    let norm = Normalization::fit(&tr.x, &tr.y);
    let xn = norm.inputs(&tr.x);
    let yn = norm.targets(&tr.y);

    let d = spec.state_dim;
    let mlp_spec = MlpSpec::new(tr.x.cols(), &config.hidden, 2 * (d + 1) + 1);
    let mut template = ParameterSet::new();
    let mlp = Mlp::new(&mut template, "member", mlp_spec, &mut rng_stream(seed, 1))?;

    let results = parallel::map_indexed(config.n_members, |m| {
        let mut last = None;
        for attempt in 0..config.max_attempts {
            let stream = 1000 + (m as u64) * 16 + attempt as u64;
            match train_member(&mlp, &xn, &yn, &tr.done, config, seed, stream) {
                Ok(p) => return Ok(p),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    });
    let members = results.into_iter().collect::<Result<Vec<_>>>()?;

    let stats = ds.compute_stats(&env);
    let mut ens = WorldModelEnsemble {
        env_id: env.id(),
        state_dim: d,
        action_spaces: spec.action_spaces.clone(),
        mlp,
        members,
        elites: Vec::new(),
        l_eps: f64::INFINITY,
        stats,
        norm,
        project_one_hot: config.project_one_hot,
        val_mse: Vec::new(),
    };

    ens.val_mse = (0..config.n_members)
        .map(|m| {
            let out = ens.member_output(m, &va.x);
            let diff = out.mean.zip_map(&va.y, |a, b| a - b);
            diff.sum_sq() / diff.len() as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..config.n_members).collect();
    order.sort_by(|&a, &b| ens.val_mse[a].total_cmp(&ens.val_mse[b]).then(a.cmp(&b)));
    ens.elites = order[..config.n_elites].to_vec();
    ens.elites.sort_unstable();

    ens.l_eps = match config.l_eps {
        Some(l) => l,
        None => {
            let mut eg: Vec<f64> = ens.uncertainties_encoded(&va.x).into_iter().map(|u| u.1).collect();
            eg.sort_by(f64::total_cmp);
            let p95 = eg[((eg.len() - 1) as f64 * 0.95).round() as usize];
            (config.l_eps_scale * p95).max(f64::MIN_POSITIVE)
        }
    };
    Ok(ens)
}

fn train_member(
    mlp: &Mlp,
    x: &Matrix,
    y: &Matrix,
    done: &[f64],
    config: &WorldModelConfig,
    seed: u64,
    stream: u64,
) -> Result<ParameterSet> {
    let mut rng = rng_stream(seed, stream);
    let mut set = ParameterSet::new();
    let mlp = Mlp::new(&mut set, "member", mlp.spec.clone(), &mut rng)?;
    let mut adam = Adam::new(&set, AdamConfig::with_lr(config.lr));
    let k = y.cols();
    let n = x.rows();
    let bs = config.batch_size.min(n);
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..bs).map(|_| rng.random_range(0..n)).collect();
        let xb = gather_rows(x, &idx);
        let yb = gather_rows(y, &idx);
        let db: Vec<f64> = idx.iter().map(|&i| done[i]).collect();

        let mut tape = Tape::new();
        let xv = tape.leaf(xb);
        let out = mlp.forward(&mut tape, &set, xv);
        let mu = tape.slice_cols(out, 0, k);
        let ls = tape.slice_cols(out, k, 2 * k);
        let ls = tape.clamp(ls, LOG_STD_MIN, LOG_STD_MAX);
        let logit = tape.slice_cols(out, 2 * k, 2 * k + 1);
        let yv = tape.leaf(yb);
        let nll = tape.gaussian_nll(mu, ls, yv);
        let nll = tape.mean_all(nll);
        let p = tape.sigmoid(logit);
        let dv = tape.leaf(Matrix::column(&db));
        let bce = tape.bce(p, dv);
        let bce = tape.mean_all(bce);
        let loss = tape.add(nll, bce);
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Training(format!("member diverged at step {step}")));
        }
        let grads = tape.backward(loss);
        set.zero_grad();
        tape.accumulate_into(&grads, &mut set);
        adam.step(&mut set)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect, coordination_policy, reference_normalizers};
    use crate::worldmodel::Dynamics;

    #[test]
    fn coordination_ensemble_learns_transitions() {
        let env = Env::from_id("coordgame-v0").unwrap();
        let ds = collect(&env, &[coordination_policy("neutral").unwrap()], 200, 0, reference_normalizers(&env, 0)).unwrap();
        let mut cfg = WorldModelConfig::for_env(&env);
        cfg.hidden = vec![32, 32];
        cfg.lr = 3e-3;
        cfg.steps = 600;
        cfg.batch_size = 64;
        let ens = train_ensemble(&ds, &cfg, 1).unwrap();
        assert_eq!(ens.elites.len(), 5);
        assert!(ens.l_eps > 0.0);

        let (_, val) = ds.split(cfg.val_fraction, &mut rng_stream(1, 0)).unwrap();
        let va = transition_arrays(&val, &env);
        let n = va.x.rows();
        for &e in &ens.elites {
            let out = ens.member_output(e, &va.x);
            let mut hits = 0;
            let mut reward_err = 0.0;
            for r in 0..n {
                let mut next: Vec<f64> = (0..5).map(|c| va.x.get(r, c) + out.mean.get(r, c)).collect();
                let truth: Vec<f64> = (0..5).map(|c| va.x.get(r, c) + va.y.get(r, c)).collect();
                crate::envs::project_one_hot_state(&mut next);
                hits += usize::from(next == truth);
                reward_err += (out.mean.get(r, 5) - va.y.get(r, 5)).abs();
                assert!(out.p_done[r] <= 0.05);
            }
            assert!(hits as f64 / n as f64 >= 0.99, "member {e}: {hits}/{n}");
            assert!(reward_err / n as f64 <= 0.05);
        }

        let s = vec![0.0, 0.0, 0.0, 1.0, 0.0];
        let a = vec![vec![vec![0.0], vec![1.0]]; 2];
        let preds = ens.predict(&[s.clone(), s], &a, &mut [rng_stream(1, 1), rng_stream(1, 2)]);
        for p in &preds {
            assert!(p.eps_g <= ens.l_eps && p.eps_r <= ens.l_eps);
            assert_eq!(p.next_state, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        }
    }
}
