use rand::seq::index::sample;

use super::{ParameterSet, Tape, Var};
use crate::Rng;

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Scalars compared.
    pub checked: usize,
    /// Scalars skipped because the loss has a kink within `epsilon` of them.
    pub kinks: usize,
}

/// Compare tape gradients of `loss_fn` against central differences.
///
/// Up to `samples` parameter scalars are drawn without replacement. A scalar
/// whose forward and backward one-sided slopes disagree by more than 1% is
/// treated as sitting on a kink and replaced by another draw. Relative
/// error is `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn finite_diff_check<F>(
    params: &ParameterSet,
    epsilon: f64,
    samples: usize,
    rng: &mut Rng,
    loss_fn: F,
) -> GradCheck
where
    F: Fn(&mut Tape, &ParameterSet) -> Var,
{
    let mut work = params.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, &work);
    let base = tape.scalar(loss);
    let grads = tape.backward(loss);
    tape.accumulate_into(&grads, &mut work);

    let eval = |set: &ParameterSet| {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, set);
        t.scalar(l)
    };

    let total = work.num_scalars();
    let order = sample(rng, total, total);
    let mut report = GradCheck::default();
    for k in order.iter() {
        if report.checked >= samples {
            break;
        }
        let (id, idx) = work.scalar_location(k).expect("index in range");
        let analytic = work.grad(id).data()[idx];
        let orig = work.value(id).data()[idx];
        work.value_mut(id).data_mut()[idx] = orig + epsilon;
        let plus = eval(&work);
        work.value_mut(id).data_mut()[idx] = orig - epsilon;
        let minus = eval(&work);
        work.value_mut(id).data_mut()[idx] = orig;

        let fwd = (plus - base) / epsilon;
        let bwd = (base - minus) / epsilon;
        if (fwd - bwd).abs() > 0.01 * fwd.abs().max(bwd.abs()) + 1e-7 {
            report.kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Matrix, Mlp, MlpSpec};
    use crate::rng_stream;

    #[test]
    fn quadratic_is_exact() {
        let mut set = ParameterSet::new();
        let data: Vec<f64> = (0..150).map(|i| (i as f64 * 0.13).sin()).collect();
        let id = set.add("p", Matrix::from_vec(10, 15, data));
        let r = finite_diff_check(&set, 1e-5, 100, &mut rng_stream(0, 0), |t, s| {
            let p = t.param(s, id);
            let sq = t.square(p);
            t.sum_all(sq)
        });
        assert_eq!(r.checked, 100);
        assert!(r.max_rel_error <= 1e-6, "{r:?}");
    }

    #[test]
    fn nll_through_mlp_within_tolerance() {
        let mut rng = rng_stream(1, 0);
        let mut set = ParameterSet::new();
        let mlp = Mlp::new(&mut set, "f", MlpSpec::new(3, &[16], 4), &mut rng).unwrap();
        let x = Matrix::from_vec(5, 3, (0..15).map(|i| (i as f64 * 0.7).cos()).collect());
        let y = Matrix::from_vec(5, 2, (0..10).map(|i| (i as f64 * 0.3).sin()).collect());
        let r = finite_diff_check(&set, 1e-5, 100, &mut rng, |t, s| {
            let xv = t.leaf(x.clone());
            let out = mlp.forward(t, s, xv);
            let mu = t.slice_cols(out, 0, 2);
            let ls = t.slice_cols(out, 2, 4);
            let ls = t.clamp(ls, -10.0, 2.0);
            let yv = t.leaf(y.clone());
            let nll = t.gaussian_nll(mu, ls, yv);
            t.mean_all(nll)
        });
        assert!(r.checked >= 100, "{r:?}");
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }
}
