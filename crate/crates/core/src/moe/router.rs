//! Noisy top-k routing of a single token.

use serde::{Deserialize, Serialize};

/// Routing outcome for one token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouterDecision {
    /// Clean router logits.
    pub logits: Vec<f64>,
    /// Noise added before selection; all zero at evaluation.
    pub noise: Vec<f64>,
    /// Softmax of the clean logits over all experts.
    pub probs: Vec<f64>,
    /// Selected experts, best first.
    pub selected: Vec<usize>,
    /// Clean probabilities renormalized over `selected`, same order.
    pub weights: Vec<f64>,
    /// k-th largest noisy score.
    pub threshold: f64,
}

impl RouterDecision {
    pub fn noisy_scores(&self) -> Vec<f64> {
        self.logits.iter().zip(&self.noise).map(|(l, n)| l + n).collect()
    }

    /// Weight of expert `e`, zero when not selected.
    pub fn weight_of(&self, e: usize) -> f64 {
        self.selected
            .iter()
            .position(|&s| s == e)
            .map_or(0.0, |i| self.weights[i])
    }
}

/// Indices of the `k` largest scores, best first; equal scores go to the
/// lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Route a token given its clean logits and optional selection noise.
pub fn route(logits: &[f64], noise: Option<&[f64]>, k: usize) -> RouterDecision {
    let noise = noise.map_or_else(|| vec![0.0; logits.len()], <[f64]>::to_vec);
    let noisy: Vec<f64> = logits.iter().zip(&noise).map(|(l, n)| l + n).collect();
    let selected = top_k(&noisy, k);
    let threshold = noisy[*selected.last().expect("k >= 1")];
    let probs = softmax(logits);
    let z: f64 = selected.iter().map(|&e| probs[e]).sum();
    let weights = selected.iter().map(|&e| probs[e] / z).collect();
    RouterDecision {
        logits: logits.to_vec(),
        noise,
        probs,
        selected,
        weights,
        threshold,
    }
}
