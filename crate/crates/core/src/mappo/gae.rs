use crate::{Error, Result};

/// Returns and advantages with absorbing-state masks `m` and timeout masks
/// `ζ`, by the reverse recursion
///
/// ```text
/// R_t = r_t + γ·m_t·(ζ_t·R_{t+1} + (1 − ζ_t)·m_t·V(s_{t+1}))
/// δ_t = r_t + γ·m_t·V(s_{t+1}) − V(s_t)
/// A_t = δ_t + γ·λ·m_t·ζ_t·A_{t+1}
/// ```
///
/// started from `R = V(s_T)·m_{T−1}` and `A = 0`. A timeout stops return
/// accumulation and bootstraps from the value of the next state instead.
pub fn gae_with_timeouts(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    masks: &[f64],
    timeouts: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if [values.len(), next_values.len(), masks.len(), timeouts.len()].iter().any(|&l| l != n) {
        return Err(Error::input("gae inputs must have equal lengths"));
    }
    let mut returns = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    if n == 0 {
        return Ok((returns, advantages));
    }
    let mut running_return = next_values[n - 1] * masks[n - 1];
    let mut running_adv = 0.0;
    for t in (0..n).rev() {
        let (m, z) = (masks[t], timeouts[t]);
        running_return = rewards[t] + gamma * m * (running_return * z + (1.0 - z) * next_values[t] * m);
        let delta = rewards[t] + gamma * next_values[t] * m - values[t];
        running_adv = delta + gamma * lambda * m * z * running_adv;
        returns[t] = running_return;
        advantages[t] = running_adv;
    }
    Ok((returns, advantages))
}
