use serde::{Deserialize, Serialize};

use super::{Matrix, ParameterSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror one [`ParameterSet`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(set: &ParameterSet, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = set
            .ids()
            .map(|id| {
                let (r, c) = set.value(id).shape();
                Matrix::zeros(r, c)
            })
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Apply one update from the gradients currently stored in `set`.
    pub fn step(&mut self, set: &mut ParameterSet) -> Result<()> {
        assert_eq!(self.m.len(), set.len(), "optimizer built for another set");
        for id in set.ids() {
            if !set.grad(id).all_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient in {}",
                    set.name(id)
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in set.ids().collect::<Vec<_>>() {
            let g = set.grad(id).data().to_vec();
            let m = self.m[id.0].data_mut();
            let v = self.v[id.0].data_mut();
            let p = set.value_mut(id).data_mut();
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                p[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        if !set.all_finite() {
            return Err(Error::numeric("parameters became non-finite"));
        }
        Ok(())
    }
}

/// Rescale gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor applied (1 when no clipping happened).
pub fn clip_grad_norm(set: &mut ParameterSet, max_norm: f64) -> f64 {
    clip_grad_norm_all(&mut [set], max_norm)
}

/// [`clip_grad_norm`] over the union of several sets.
pub fn clip_grad_norm_all(sets: &mut [&mut ParameterSet], max_norm: f64) -> f64 {
    let norm = sets
        .iter()
        .map(|s| s.grad_norm().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    for s in sets.iter_mut() {
        for id in s.ids().collect::<Vec<_>>() {
            s.grad_mut(id).scale_assign(factor);
        }
    }
    factor
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_with_grad(g: &[f64]) -> ParameterSet {
        let mut s = ParameterSet::new();
        let id = s.add("p", Matrix::row_vector(&vec![1.0; g.len()]));
        s.grad_mut(id).data_mut().copy_from_slice(g);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = set_with_grad(&[0.0, 0.0]);
        let mut adam = Adam::new(&s, AdamConfig::with_lr(0.1));
        adam.step(&mut s).unwrap();
        assert_eq!(s.value(crate::nn::ParamId(0)).data(), &[1.0, 1.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let g = 0.25;
        let mut s = set_with_grad(&[g, -4.0 * g]);
        let cfg = AdamConfig::with_lr(1e-3);
        let mut adam = Adam::new(&s, cfg);
        adam.step(&mut s).unwrap();
        // m̂ = g, v̂ = g², so the update is -lr·g/(|g| + ε).
        for (p, gk) in s.value(crate::nn::ParamId(0)).data().iter().zip([g, -4.0 * g]) {
            let want = 1.0 - 1e-3 * gk / (gk.abs() + 1e-8);
            assert!((p - want).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut s = set_with_grad(&[f64::NAN]);
        let mut adam = Adam::new(&s, AdamConfig::with_lr(0.1));
        assert!(matches!(adam.step(&mut s), Err(Error::Numeric(_))));
    }

    #[test]
    fn clipping_cases() {
        let mut s = set_with_grad(&[0.3, 0.4]);
        assert_eq!(clip_grad_norm(&mut s, 1.0), 1.0);
        let mut s = set_with_grad(&[0.6, 0.8]);
        assert_eq!(clip_grad_norm(&mut s, 1.0), 1.0);
        let mut s = set_with_grad(&[1.2, 1.6]);
        assert_eq!(clip_grad_norm(&mut s, 1.0), 0.5);
        assert_eq!(s.grad(crate::nn::ParamId(0)).data(), &[0.6, 0.8]);
    }
}
