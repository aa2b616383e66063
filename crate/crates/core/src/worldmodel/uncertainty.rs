/// Unbiased variance of the members' reward predictions.
pub fn epistemic_reward_uncertainty(rewards: &[f64]) -> f64 {
    let n = rewards.len();
    assert!(n >= 2, "need at least two members");
    let mean = rewards.iter().sum::<f64>() / n as f64;
    rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Frobenius norm of the unbiased covariance of the members' concatenated
/// `[ŝ′, r̂]` predictions.
pub fn epistemic_general_uncertainty(preds: &[Vec<f64>]) -> f64 {
    let n = preds.len();
    assert!(n >= 2, "need at least two members");
    let d = preds[0].len();
    assert!(preds.iter().all(|p| p.len() == d), "ragged member predictions");
    let mut mean = vec![0.0; d];
    for p in preds {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let dev: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut sum_sq = 0.0;
    for i in 0..d {
        for j in i..d {
            let c: f64 = dev.iter().map(|v| v[i] * v[j]).sum::<f64>() / (n - 1) as f64;
            sum_sq += if i == j { c * c } else { 2.0 * c * c };
        }
    }
    sum_sq.sqrt()
}
