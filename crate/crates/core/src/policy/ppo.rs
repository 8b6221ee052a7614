use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::sft::{check_targets, Target};
use super::softmax::{kl_between, EpisodeFeatures, SoftmaxPolicy};
use crate::env::Episode;
use crate::numkernel::{adam_step, log_softmax, mean, AdamState, RandomStream};
use crate::scoremodel::{MovingAverageNormalizer, Scorer, ScorerKind};
use crate::{Error, Result};

/// Which score drives the PPO reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Raw reward-model score.
    Rm,
    /// Reward-model score normalized by a moving average.
    RmMa,
    /// Advantage-model score.
    Am,
}

impl ScoreMode {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Rm => "rm",
            ScoreMode::RmMa => "rm_ma",
            ScoreMode::Am => "am",
        }
    }

    fn accepts(self, kind: ScorerKind) -> bool {
        match (self, kind) {
            (_, ScorerKind::Oracle | ScorerKind::Other) => true,
            (ScoreMode::Rm | ScoreMode::RmMa, ScorerKind::Reward) => true,
            (ScoreMode::Am, ScorerKind::Advantage) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoSettings {
    /// KL coefficient.
    pub beta: f64,
    /// Clip ratio epsilon.
    pub clip: f64,
    pub steps: usize,
    pub batch_prompts: usize,
    pub lr: f64,
    /// Gradient passes over each sampled batch.
    pub update_epochs: usize,
    pub score_mode: ScoreMode,
    /// Rehearsal NLL coefficient.
    pub gamma: f64,
    /// Rehearsal mini-batch size as a fraction of the PPO batch.
    pub rehearsal_fraction: f64,
    /// Decay of the moving-average normalizer used by `RmMa`.
    pub ma_decay: f64,
}

impl Default for PpoSettings {
    fn default() -> Self {
        Self {
            beta: 0.1,
            clip: 0.2,
            steps: 100,
            batch_prompts: 64,
            lr: 1e-3,
            update_epochs: 4,
            score_mode: ScoreMode::Am,
            gamma: 0.01,
            rehearsal_fraction: 0.25,
            ma_decay: 0.99,
        }
    }
}

impl PpoSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("ppo: {m}")));
        if !(self.beta >= 0.0) {
            return bad("beta must be >= 0");
        }
        if !(0.0..1.0).contains(&self.clip) {
            return bad("clip must lie in [0, 1)");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be >= 0");
        }
        if self.batch_prompts == 0 || self.update_epochs == 0 {
            return bad("batch_prompts and update_epochs must be positive");
        }
        if !(self.lr >= 0.0) {
            return bad("lr must be >= 0");
        }
        if !(self.ma_decay > 0.0 && self.ma_decay < 1.0) {
            return bad("ma_decay must lie in (0, 1)");
        }
        if !(self.rehearsal_fraction > 0.0) {
            return bad("rehearsal_fraction must be > 0");
        }
        Ok(())
    }
}

/// One sampled action with its frozen behaviour log-probability and advantage.
#[derive(Debug, Clone, Copy)]
pub struct Rollout<'a> {
    pub episode: &'a Episode,
    pub action: usize,
    pub old_logprob: f64,
    pub advantage: f64,
}

/// `-mean min(rho * A, clamp(rho, 1 - eps, 1 + eps) * A)` and its gradient.
///
/// The unclipped branch carries gradient only where it is strictly smaller,
/// or where the ratio is strictly inside the clip band; with `eps = 0` the
/// objective is therefore flat.
pub fn surrogate_loss_and_grad(policy: &SoftmaxPolicy, rollouts: &[Rollout<'_>], clip: f64) -> Result<(f64, Vec<f64>)> {
    if rollouts.is_empty() {
        return Err(Error::Empty("rollout batch"));
    }
    let mut grad = vec![0.0; policy.weights.len()];
    let scale = 1.0 / rollouts.len() as f64;
    let mut loss = 0.0;
    for ro in rollouts {
        let feats = EpisodeFeatures::new(ro.episode);
        let logp = log_softmax(&policy.logits_from(&feats))[ro.action];
        let ratio = libm::exp(logp - ro.old_logprob);
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let a = ro.advantage;
        let (unclipped_obj, clipped_obj) = (ratio * a, clipped * a);
        let inside = ratio > 1.0 - clip && ratio < 1.0 + clip;
        let unclipped_active = unclipped_obj < clipped_obj || inside;
        loss -= unclipped_obj.min(clipped_obj) * scale;
        if unclipped_active && a != 0.0 {
            // d(rho A)/dw = rho A d log pi / dw; the loss takes the negative
            policy.accumulate_logprob_grad(&feats, ro.action, -ratio * a * scale, &mut grad);
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("ppo surrogate"));
    }
    Ok((loss, grad))
}

/// Surrogate loss plus `gamma` times the rehearsal NLL.
pub fn combined_loss_and_grad(
    policy: &SoftmaxPolicy,
    rollouts: &[Rollout<'_>],
    clip: f64,
    rehearsal: &[Target<'_>],
    gamma: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let (mut loss, mut grad) = surrogate_loss_and_grad(policy, rollouts, clip)?;
    let (nll, ngrad) = super::sft::nll_and_grad(policy, rehearsal)?;
    loss += gamma * nll;
    for (g, n) in grad.iter_mut().zip(&ngrad) {
        *g += gamma * n;
    }
    Ok((loss, grad, nll))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub mean_score: f64,
    pub mean_kl: f64,
    pub mean_oracle_utility: f64,
    pub rehearsal_nll: f64,
}

/// Bandit PPO against a frozen reference policy.
#[derive(Debug, Clone)]
pub struct PpoTrainer {
    pub policy: SoftmaxPolicy,
    pub init: SoftmaxPolicy,
    settings: PpoSettings,
    adam: AdamState,
    normalizer: Option<MovingAverageNormalizer>,
    rng: RandomStream,
    step: usize,
    batch_order: Vec<usize>,
    batch_cursor: usize,
    rehearsal_order: Vec<usize>,
    rehearsal_cursor: usize,
}

impl PpoTrainer {
    pub fn new(init: SoftmaxPolicy, settings: PpoSettings, rng: RandomStream) -> Result<Self> {
        settings.validate()?;
        let normalizer = (settings.score_mode == ScoreMode::RmMa).then(|| MovingAverageNormalizer::new(settings.ma_decay));
        Ok(Self {
            adam: AdamState::new(init.weights.len()),
            policy: init.clone(),
            init,
            settings,
            normalizer,
            rng,
            step: 0,
            batch_order: Vec::new(),
            batch_cursor: 0,
            rehearsal_order: Vec::new(),
            rehearsal_cursor: 0,
        })
    }

    pub fn settings(&self) -> &PpoSettings {
        &self.settings
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Next `batch_prompts` episodes, cycling through a shuffled order of `pool`.
    pub fn next_batch<'a>(&mut self, pool: &'a [Episode]) -> Vec<&'a Episode> {
        if self.batch_order.len() != pool.len() {
            self.batch_order = self.rng.split_named("batches").permutation(pool.len());
            self.batch_cursor = 0;
        }
        let n = self.settings.batch_prompts.min(pool.len());
        (0..n)
            .map(|_| {
                let i = self.batch_order[self.batch_cursor % pool.len()];
                self.batch_cursor += 1;
                &pool[i]
            })
            .collect()
    }

    fn rehearsal_batch<'a>(&mut self, set: &[Target<'a>], batch_len: usize) -> Vec<Target<'a>> {
        if self.rehearsal_order.len() != set.len() {
            self.rehearsal_order = self.rng.split_named("rehearsal").permutation(set.len());
            self.rehearsal_cursor = 0;
        }
        let n = libm::round(batch_len as f64 * self.settings.rehearsal_fraction).max(1.0) as usize;
        (0..n)
            .map(|_| {
                let i = self.rehearsal_order[self.rehearsal_cursor % set.len()];
                self.rehearsal_cursor += 1;
                set[i]
            })
            .collect()
    }

    pub fn ppo_step(&mut self, batch: &[&Episode], scorer: &dyn Scorer) -> Result<StepStats> {
        self.step_inner(batch, scorer, None)
    }

    pub fn ppo_sr_step(&mut self, batch: &[&Episode], scorer: &dyn Scorer, rehearsal: &[Target<'_>]) -> Result<StepStats> {
        if rehearsal.is_empty() {
            return Err(Error::Empty("rehearsal set"));
        }
        check_targets(rehearsal)?;
        self.step_inner(batch, scorer, Some(rehearsal))
    }

    fn step_inner(&mut self, batch: &[&Episode], scorer: &dyn Scorer, rehearsal: Option<&[Target<'_>]>) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::Empty("ppo batch"));
        }
        if !self.settings.score_mode.accepts(scorer.kind()) {
            return Err(Error::ModeMismatch {
                expected: self.settings.score_mode.name(),
                actual: scorer.kind().name(),
            });
        }
        let step = self.step;
        let step_rng = self.rng.split_named("sample").split(step as u64);
        let beta = self.settings.beta;

        let mut actions = Vec::with_capacity(batch.len());
        let mut rewards = Vec::with_capacity(batch.len());
        let mut scores = Vec::with_capacity(batch.len());
        let mut kls = Vec::with_capacity(batch.len());
        let mut utilities = Vec::with_capacity(batch.len());
        for (i, ep) in batch.iter().enumerate() {
            let feats = EpisodeFeatures::new(ep);
            let logp = log_softmax(&self.policy.logits_from(&feats));
            let logq = log_softmax(&self.init.logits_from(&feats));
            let probs: Vec<f64> = logp.iter().map(|&l| libm::exp(l)).collect();
            let action = step_rng.split(i as u64).categorical(&probs);
            let raw = scorer
                .score(&ep.prompt, &ep.candidates[action])
                .map_err(|e| e.at_step(step))?;
            let shaped = match self.normalizer.as_mut() {
                Some(n) => n.normalize(raw),
                None => raw,
            };
            rewards.push(shaped - beta * (logp[action] - logq[action]));
            scores.push(raw);
            kls.push(kl_between(&logp, &logq));
            utilities.push(ep.true_utilities[action]);
            actions.push((action, logp[action]));
        }
        let baseline = mean(&rewards);
        let rollouts: Vec<Rollout<'_>> = batch
            .iter()
            .zip(&actions)
            .zip(&rewards)
            .map(|((ep, &(action, old_logprob)), r)| Rollout {
                episode: ep,
                action,
                old_logprob,
                advantage: r - baseline,
            })
            .collect();

        let rehearsal_batch = rehearsal.map(|set| self.rehearsal_batch(set, batch.len()));
        let mut rehearsal_nll = 0.0;
        for epoch in 0..self.settings.update_epochs {
            let grad = match &rehearsal_batch {
                Some(rb) => {
                    let (_, g, nll) = combined_loss_and_grad(&self.policy, &rollouts, self.settings.clip, rb, self.settings.gamma)
                        .map_err(|e| e.at_step(step))?;
                    if epoch == 0 {
                        rehearsal_nll = nll;
                    }
                    g
                }
                None => {
                    surrogate_loss_and_grad(&self.policy, &rollouts, self.settings.clip)
                        .map_err(|e| e.at_step(step))?
                        .1
                }
            };
            adam_step(&mut self.policy.weights, &grad, &mut self.adam, self.settings.lr).map_err(|e| e.at_step(step))?;
        }
        self.step += 1;
        Ok(StepStats {
            step,
            mean_score: mean(&scores),
            mean_kl: mean(&kls),
            mean_oracle_utility: mean(&utilities),
            rehearsal_nll,
        })
    }
}
