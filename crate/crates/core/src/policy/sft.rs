use alloc::vec;
use alloc::vec::Vec;

use super::softmax::{EpisodeFeatures, SoftmaxPolicy};
use crate::env::{Episode, ExpertPair};
use crate::numkernel::{adam_step, AdamState, RandomStream};
use crate::{Error, Result};

/// An episode paired with the candidate a policy should imitate.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub episode: &'a Episode,
    pub index: usize,
}

impl<'a> From<&'a ExpertPair> for Target<'a> {
    fn from(p: &'a ExpertPair) -> Self {
        Target {
            episode: &p.episode,
            index: p.expert_index,
        }
    }
}

pub(crate) fn check_targets(targets: &[Target<'_>]) -> Result<()> {
    for t in targets {
        if t.index >= t.episode.candidates.len() {
            return Err(Error::IndexOutOfRange {
                what: "candidate pool",
                index: t.index,
                len: t.episode.candidates.len(),
            });
        }
    }
    Ok(())
}

/// Mean negative log-likelihood of the targets and its gradient.
pub fn nll_and_grad(policy: &SoftmaxPolicy, targets: &[Target<'_>]) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() {
        return Err(Error::Empty("teacher-forcing batch"));
    }
    check_targets(targets)?;
    let mut grad = vec![0.0; policy.weights.len()];
    let scale = 1.0 / targets.len() as f64;
    let mut nll = 0.0;
    for t in targets {
        let feats = EpisodeFeatures::new(t.episode);
        nll -= policy.accumulate_logprob_grad(&feats, t.index, -scale, &mut grad);
    }
    Ok((nll * scale, grad))
}

/// One shuffled pass of mini-batch teacher forcing.
pub fn sft_update(
    policy: &mut SoftmaxPolicy,
    targets: &[Target<'_>],
    lr: f64,
    batch_size: usize,
    adam: &mut AdamState,
    rng: &mut RandomStream,
) -> Result<f64> {
    check_targets(targets)?;
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let order = rng.permutation(targets.len());
    let mut last = 0.0;
    let mut batch = Vec::with_capacity(batch_size);
    for chunk in order.chunks(batch_size) {
        batch.clear();
        batch.extend(chunk.iter().map(|&i| targets[i]));
        let (nll, grad) = nll_and_grad(policy, &batch)?;
        adam_step(&mut policy.weights, &grad, adam, lr)?;
        last = nll;
    }
    Ok(last)
}
