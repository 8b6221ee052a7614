use alloc::format;

use serde::{Deserialize, Serialize};

use super::net::{score, ScoreNet};
use crate::env::{Prompt, Response};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageConfig {
    pub margin: f64,
    /// Weight on the current policy relative to the alternates.
    pub n: usize,
    /// Number of alternate source policies in the comparison data.
    pub k: usize,
    pub weight_clip: (f64, f64),
    /// Weight of the optional regression of `e(x)` toward the mean reward of
    /// the pair; zero disables it.
    pub expected_regression: f64,
}

impl Default for AdvantageConfig {
    fn default() -> Self {
        Self {
            margin: 2.5,
            n: 8,
            k: 1,
            weight_clip: (0.1, 10.0),
            expected_regression: 0.0,
        }
    }
}

impl AdvantageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k >= self.n {
            return Err(Error::InvalidConfig(format!("need 0 <= k < n, got k={} n={}", self.k, self.n)));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidConfig(format!("margin must be > 0, got {}", self.margin)));
        }
        let (lo, hi) = self.weight_clip;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            return Err(Error::InvalidConfig(format!("weight clip must satisfy 0 < lo <= 1 <= hi, got ({lo}, {hi})")));
        }
        if !(self.expected_regression >= 0.0) {
            return Err(Error::InvalidConfig("expected_regression must be >= 0".into()));
        }
        Ok(())
    }

    /// Share of the expected head, `(N - K) / N`.
    pub fn expected_share(&self) -> f64 {
        (self.n - self.k) as f64 / self.n as f64
    }

    /// Clipped importance weight `pi_current / pi_source`.
    pub fn importance_weight(&self, current_logprob: f64, source_logprob: f64) -> f64 {
        let (lo, hi) = self.weight_clip;
        libm::exp(current_logprob - source_logprob).clamp(lo, hi)
    }

    /// Coefficient on `r` in the advantage: `1 - w/N` for a record from an
    /// alternate policy, `1` otherwise.
    pub fn reward_coefficient(&self, current_logprob: f64, source_logprob: f64, source_is_current: bool) -> f64 {
        if source_is_current || self.k == 0 {
            1.0
        } else {
            1.0 - self.importance_weight(current_logprob, source_logprob) / self.n as f64
        }
    }

    /// Advantage from already computed heads.
    pub fn combine(&self, reward: f64, expected: f64, reward_coefficient: f64) -> f64 {
        reward_coefficient * reward - self.expected_share() * expected
    }
}

/// `a = r - (N-K)/N * e - [alternate] (1/N) * w * r`.
#[allow(clippy::too_many_arguments)]
pub fn advantage_score(
    net: &ScoreNet,
    prompt: &Prompt,
    response: &Response,
    current_logprob: f64,
    source_logprob: f64,
    source_is_current: bool,
    cfg: &AdvantageConfig,
) -> Result<f64> {
    if !current_logprob.is_finite() || !source_logprob.is_finite() {
        return Err(Error::NonFinite("log-probability"));
    }
    let (r, e) = score(net, prompt, response)?;
    let coef = cfg.reward_coefficient(current_logprob, source_logprob, source_is_current);
    Ok(cfg.combine(r, e, coef))
}
