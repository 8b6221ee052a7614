use alloc::vec;
use alloc::vec::Vec;

use super::softmax::{EpisodeFeatures, SoftmaxPolicy};
use crate::env::Episode;
use crate::numkernel::{adam_step, AdamState, RandomStream};
use crate::scoremodel::Scorer;
use crate::{Error, Result};

/// Samples one response per prompt, keeps those scoring at least `threshold`
/// and takes one Adam step on the summed log-likelihood of the kept set.
/// Returns the kept count; with nothing kept the policy is untouched.
pub fn rejection_sampling_iteration(
    policy: &mut SoftmaxPolicy,
    batch: &[&Episode],
    scorer: &dyn Scorer,
    threshold: f64,
    lr: f64,
    adam: &mut AdamState,
    rng: &RandomStream,
) -> Result<usize> {
    if threshold.is_nan() {
        return Err(Error::NonFinite("rejection threshold"));
    }
    let mut kept: Vec<(EpisodeFeatures, usize)> = Vec::new();
    for (i, ep) in batch.iter().enumerate() {
        let feats = EpisodeFeatures::new(ep);
        let probs = crate::numkernel::softmax(&policy.logits_from(&feats));
        let action = rng.split(i as u64).categorical(&probs);
        if scorer.score(&ep.prompt, &ep.candidates[action])? >= threshold {
            kept.push((feats, action));
        }
    }
    if kept.is_empty() {
        return Ok(0);
    }
    let mut grad = vec![0.0; policy.weights.len()];
    for (feats, action) in &kept {
        policy.accumulate_logprob_grad(feats, *action, -1.0, &mut grad);
    }
    adam_step(&mut policy.weights, &grad, adam, lr)?;
    Ok(kept.len())
}

/// `q`-quantile (nearest rank) of the scores of responses the policy samples
/// on `batch`; the default rejection threshold uses `q = 0.75`.
pub fn score_quantile(policy: &SoftmaxPolicy, batch: &[&Episode], scorer: &dyn Scorer, q: f64, rng: &RandomStream) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("calibration batch"));
    }
    let mut scores = Vec::with_capacity(batch.len());
    for (i, ep) in batch.iter().enumerate() {
        let probs = policy.action_probs(ep);
        let action = rng.split(i as u64).categorical(&probs);
        scores.push(scorer.score(&ep.prompt, &ep.candidates[action])?);
    }
    scores.sort_by(f64::total_cmp);
    let rank = libm::ceil(q.clamp(0.0, 1.0) * scores.len() as f64).max(1.0) as usize - 1;
    Ok(scores[rank])
}
