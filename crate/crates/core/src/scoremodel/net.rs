use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::env::{Prompt, Response};
use crate::numkernel::RandomStream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreLayout {
    /// Prompt / response feature dimension.
    pub dim: usize,
    pub hidden: Vec<usize>,
}

impl ScoreLayout {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            hidden: vec![32, 32],
        }
    }

    fn tower(&self, offset: usize, input: usize) -> Mlp {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(1);
        Mlp::new(offset, sizes)
    }

    /// Reward tower over `[prompt, response, exploit]`.
    pub(crate) fn reward_tower(&self) -> Mlp {
        self.tower(0, 2 * self.dim + 1)
    }

    /// Expected-reward tower over the prompt alone.
    pub(crate) fn expected_tower(&self) -> Mlp {
        let r = self.reward_tower();
        self.tower(r.param_count(), self.dim)
    }

    pub fn reward_param_range(&self) -> core::ops::Range<usize> {
        0..self.reward_tower().param_count()
    }

    pub fn expected_param_range(&self) -> core::ops::Range<usize> {
        let e = self.expected_tower();
        e.offset..e.offset + e.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.expected_param_range().end
    }
}

/// Reward head `r(x, y)` and expected-reward head `e(x)` over one flat
/// parameter vector. The expected head never sees the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNet {
    pub layout: ScoreLayout,
    pub params: Vec<f64>,
}

pub(crate) struct Forward {
    pub reward: super::mlp::Trace,
    pub expected: super::mlp::Trace,
}

impl ScoreNet {
    pub fn zeros(layout: ScoreLayout) -> Self {
        let n = layout.param_count();
        Self {
            layout,
            params: vec![0.0; n],
        }
    }

    /// Weights ~ Normal(0, 1/fan_in), biases zero.
    pub fn init(layout: ScoreLayout, rng: &mut RandomStream) -> Self {
        let mut net = Self::zeros(layout);
        for tower in [net.layout.reward_tower(), net.layout.expected_tower()] {
            for (wo, _bo, fan_in, fan_out) in tower.layers() {
                let sd = libm::sqrt(1.0 / fan_in as f64);
                for w in &mut net.params[wo..wo + fan_in * fan_out] {
                    *w = sd * rng.normal();
                }
            }
        }
        net
    }

    pub fn check(&self, prompt: &Prompt, response: &Response) -> Result<()> {
        let d = self.layout.dim;
        if prompt.features.len() != d {
            return Err(Error::DimensionMismatch {
                what: "prompt features",
                expected: d,
                actual: prompt.features.len(),
            });
        }
        if response.content.len() != d {
            return Err(Error::DimensionMismatch {
                what: "response content",
                expected: d,
                actual: response.content.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn reward_input(prompt: &Prompt, response: &Response) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * prompt.features.len() + 1);
        v.extend_from_slice(&prompt.features);
        v.extend_from_slice(&response.content);
        v.push(if response.exploit { 1.0 } else { 0.0 });
        v
    }

    pub(crate) fn reward_trace(&self, prompt: &Prompt, response: &Response) -> super::mlp::Trace {
        self.layout
            .reward_tower()
            .forward(&self.params, &Self::reward_input(prompt, response))
    }

    pub(crate) fn expected_trace(&self, prompt: &Prompt) -> super::mlp::Trace {
        self.layout.expected_tower().forward(&self.params, &prompt.features)
    }

    pub(crate) fn forward(&self, prompt: &Prompt, response: &Response) -> Forward {
        Forward {
            reward: self.reward_trace(prompt, response),
            expected: self.expected_trace(prompt),
        }
    }

    pub fn reward(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        self.check(prompt, response)?;
        Ok(self.reward_trace(prompt, response).output)
    }

    pub fn expected(&self, prompt: &Prompt) -> Result<f64> {
        if prompt.features.len() != self.layout.dim {
            return Err(Error::DimensionMismatch {
                what: "prompt features",
                expected: self.layout.dim,
                actual: prompt.features.len(),
            });
        }
        Ok(self.expected_trace(prompt).output)
    }
}

/// `(r(x, y), e(x))`.
pub fn score(net: &ScoreNet, prompt: &Prompt, response: &Response) -> Result<(f64, f64)> {
    net.check(prompt, response)?;
    let f = net.forward(prompt, response);
    Ok((f.reward.output, f.expected.output))
}
