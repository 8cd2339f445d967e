//! Load-balancing loss: squared coefficient of variation of the expected
//! number of tokens each expert receives.

use log::warn;

use super::router::RouterDecision;
use crate::nn::tape::normal_cdf;
use crate::nn::{Real, Tape, Var};

/// `(std / mean)^2` with the population standard deviation. An all-zero
/// load vector yields 0.
pub fn cv_squared(loads: &[f64]) -> f64 {
    if loads.is_empty() {
        return 0.0;
    }
    let n = loads.len() as f64;
    let mean = loads.iter().sum::<f64>() / n;
    if mean == 0.0 {
        warn!("load loss on an all-zero load vector");
        return 0.0;
    }
    let var = loads.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    var / (mean * mean)
}

/// Probability that expert `e` is still selected for a token when its clean
/// logit receives fresh noise of standard deviation `1/E`.
pub fn selection_probability(d: &RouterDecision, e: usize) -> f64 {
    let n = d.logits.len() as f64;
    normal_cdf(n * (d.logits[e] - d.threshold))
}

pub fn expert_loads(decisions: &[RouterDecision]) -> Vec<f64> {
    let n = decisions.first().map_or(0, |d| d.logits.len());
    let mut loads = vec![0.0; n];
    for d in decisions {
        for (e, l) in loads.iter_mut().enumerate() {
            *l += selection_probability(d, e);
        }
    }
    loads
}

pub fn load_loss(decisions: &[RouterDecision]) -> f64 {
    cv_squared(&expert_loads(decisions))
}

/// Differentiable version. `logits` and `noisy` are `N x E`; `kth` holds the
/// column of the k-th largest noisy score per row.
pub fn load_loss_tape<F: Real>(tape: &mut Tape<F>, logits: Var, noisy: Var, kth: Vec<usize>) -> Var {
    let (_, e) = tape.shape(logits);
    let thr = tape.gather(noisy, kth);
    let diff = tape.sub(logits, thr);
    let z = tape.scale(diff, F::c(e as f64));
    let p = tape.normal_cdf(z);
    let loads = tape.sum_rows(p);
    let mean = tape.mean(loads);
    if tape.value(mean).item() == F::zero() {
        warn!("load loss on an all-zero load vector");
        return tape.constant(crate::nn::Tensor::scalar(F::zero()));
    }
    let dev = tape.sub(loads, mean);
    let sq = tape.square(dev);
    let var = tape.mean(sq);
    let m2 = tape.square(mean);
    tape.div(var, m2)
}
