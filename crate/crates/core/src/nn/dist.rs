//! Scalar reference forms of the distribution losses and samplers.
//!
//! The tape carries fused, batched versions of the same formulas
//! ([`Tape::gaussian_nll`](super::Tape::gaussian_nll),
//! [`Tape::bce`](super::Tape::bce)).

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::tape::PROB_EPS;
use crate::{Error, Result, Rng};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian negative log-likelihood summed over dimensions.
pub fn gaussian_nll(mu: &[f64], log_sigma: &[f64], target: &[f64]) -> Result<f64> {
    if mu.len() != log_sigma.len() || mu.len() != target.len() {
        return Err(Error::input("gaussian_nll length mismatch"));
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !(finite(mu) && finite(log_sigma) && finite(target)) {
        return Err(Error::numeric("gaussian_nll got a non-finite input"));
    }
    Ok(mu
        .iter()
        .zip(log_sigma)
        .zip(target)
        .map(|((&m, &s), &t)| HALF_LN_2PI + s + (t - m).powi(2) / (2.0 * (2.0 * s).exp()))
        .sum())
}

/// Binary cross-entropy with `p` clamped to `[1e-7, 1 − 1e-7]`.
pub fn bernoulli_bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

pub fn sample_gaussian(mu: &[f64], log_sigma: &[f64], rng: &mut Rng) -> Vec<f64> {
    mu.iter()
        .zip(log_sigma)
        .map(|(&m, &s)| {
            let z: f64 = StandardNormal.sample(rng);
            m + s.exp() * z
        })
        .collect()
}

/// Softmax of a logit row.
pub fn categorical_probs(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    super::tape::softmax_in_place(&mut p);
    p
}

/// Inverse-CDF draw; the last index absorbs rounding slack.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
