use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{Episode, Prompt, Response};
use crate::numkernel::{log_softmax, softmax};

/// Categorical policy over an episode's candidate pool with logits linear
/// in the pair features
/// `[x, y, exploit, x (outer) y, y (elementwise) y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub temperature: f64,
}

pub fn feature_len(dim: usize) -> usize {
    3 * dim + 1 + dim * dim
}

/// Appends the pair features of `(prompt, response)` to `out`.
pub fn pair_features(prompt: &Prompt, response: &Response, out: &mut Vec<f64>) {
    let x = &prompt.features;
    let y = &response.content;
    out.extend_from_slice(x);
    out.extend_from_slice(y);
    out.push(if response.exploit { 1.0 } else { 0.0 });
    for xi in x {
        out.extend(y.iter().map(|yj| xi * yj));
    }
    out.extend(y.iter().map(|yj| yj * yj));
}

/// Feature rows of every candidate, row-major.
#[derive(Debug, Clone)]
pub struct EpisodeFeatures {
    pub width: usize,
    pub rows: Vec<f64>,
}

impl EpisodeFeatures {
    pub fn new(episode: &Episode) -> Self {
        let width = feature_len(episode.prompt.features.len());
        let mut rows = Vec::with_capacity(width * episode.candidates.len());
        for c in &episode.candidates {
            pair_features(&episode.prompt, c, &mut rows);
        }
        Self { width, rows }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.width..(i + 1) * self.width]
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl SoftmaxPolicy {
    /// Uniform policy.
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            weights: vec![0.0; feature_len(dim)],
            temperature: 1.0,
        }
    }

    pub fn logits_from(&self, feats: &EpisodeFeatures) -> Vec<f64> {
        (0..feats.len())
            .map(|i| {
                feats
                    .row(i)
                    .iter()
                    .zip(&self.weights)
                    .map(|(f, w)| f * w)
                    .sum::<f64>()
                    / self.temperature
            })
            .collect()
    }

    pub fn logits(&self, episode: &Episode) -> Vec<f64> {
        self.logits_from(&EpisodeFeatures::new(episode))
    }

    pub fn action_probs(&self, episode: &Episode) -> Vec<f64> {
        softmax(&self.logits(episode))
    }

    pub fn log_probs(&self, episode: &Episode) -> Vec<f64> {
        log_softmax(&self.logits(episode))
    }

    /// Highest-probability candidate (lowest index on ties).
    pub fn greedy(&self, episode: &Episode) -> usize {
        crate::env::argmax(&self.logits(episode))
    }

    /// Adds `scale * d log pi(action) / d weights` to `grad` and returns
    /// `log pi(action)`.
    pub(crate) fn accumulate_logprob_grad(&self, feats: &EpisodeFeatures, action: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let logp = log_softmax(&self.logits_from(feats));
        if scale != 0.0 {
            let s = scale / self.temperature;
            for i in 0..feats.len() {
                let coef = if i == action { 1.0 } else { 0.0 } - libm::exp(logp[i]);
                let c = s * coef;
                if c != 0.0 {
                    for (g, f) in grad.iter_mut().zip(feats.row(i)) {
                        *g += c * f;
                    }
                }
            }
        }
        logp[action]
    }
}

/// Exact `KL(pi || pi_init)` over the candidate pool.
pub fn kl_to_init(policy: &SoftmaxPolicy, init: &SoftmaxPolicy, episode: &Episode) -> f64 {
    let feats = EpisodeFeatures::new(episode);
    kl_between(&log_softmax(&policy.logits_from(&feats)), &log_softmax(&init.logits_from(&feats)))
}

pub(crate) fn kl_between(logp: &[f64], logq: &[f64]) -> f64 {
    let kl: f64 = logp
        .iter()
        .zip(logq)
        .map(|(&lp, &lq)| {
            let p = libm::exp(lp);
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum();
    kl.max(0.0)
}
