//! Reward model and advantage model over one small feed-forward scorer.

mod advantage;
mod loss;
mod mlp;
mod net;
mod normalizer;
mod train;

pub use advantage::{advantage_score, AdvantageConfig};
pub use loss::{am_loss_and_grad, rm_loss_and_grad};
pub use net::{score, ScoreLayout, ScoreNet};
pub use normalizer::MovingAverageNormalizer;
pub use train::{train_score_model, ScoreTrainSettings, TrainLogRow};

use serde::{Deserialize, Serialize};

use crate::env::{ComparisonRecord, Prompt, Response};
use crate::Result;

/// What a scorer's numbers mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerKind {
    Reward,
    Advantage,
    Oracle,
    Other,
}

impl ScorerKind {
    pub fn name(self) -> &'static str {
        match self {
            ScorerKind::Reward => "reward",
            ScorerKind::Advantage => "advantage",
            ScorerKind::Oracle => "oracle",
            ScorerKind::Other => "other",
        }
    }
}

/// Anything that assigns a scalar score to a (prompt, response) pair.
pub trait Scorer {
    /// Score of a response sampled from the current policy.
    fn score(&self, prompt: &Prompt, response: &Response) -> Result<f64>;

    /// Scores of a stored comparison, `(chosen, rejected)`.
    fn score_pair(&self, rec: &ComparisonRecord) -> Result<(f64, f64)> {
        Ok((self.score(&rec.prompt, &rec.chosen)?, self.score(&rec.prompt, &rec.rejected)?))
    }

    fn kind(&self) -> ScorerKind {
        ScorerKind::Other
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        (**self).score(prompt, response)
    }

    fn score_pair(&self, rec: &ComparisonRecord) -> Result<(f64, f64)> {
        (**self).score_pair(rec)
    }

    fn kind(&self) -> ScorerKind {
        (**self).kind()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Trained with the pairwise ranking loss; scores are `r`.
    Rm,
    /// Trained with ranking plus bounding loss; scores are advantages `a`.
    Am,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rm => "rm",
            ModelKind::Am => "am",
        }
    }
}

/// A trained scorer plus everything needed to reproduce its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreCheckpoint {
    pub mode: ModelKind,
    pub net: ScoreNet,
    pub advantage: AdvantageConfig,
    pub seed: u64,
    pub steps: usize,
}

impl ScoreCheckpoint {
    /// Advantage of a response sampled from the current policy.
    pub fn advantage(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        advantage_score(&self.net, prompt, response, 0.0, 0.0, true, &self.advantage)
    }

    /// The reward head alone, whatever the mode.
    pub fn reward_head(&self) -> RewardHead<'_> {
        RewardHead(self)
    }
}

impl Scorer for ScoreCheckpoint {
    fn score(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        match self.mode {
            ModelKind::Rm => self.net.reward(prompt, response),
            ModelKind::Am => self.advantage(prompt, response),
        }
    }

    fn score_pair(&self, rec: &ComparisonRecord) -> Result<(f64, f64)> {
        match self.mode {
            ModelKind::Rm => Ok((
                self.net.reward(&rec.prompt, &rec.chosen)?,
                self.net.reward(&rec.prompt, &rec.rejected)?,
            )),
            ModelKind::Am => {
                let (r_c, e) = score(&self.net, &rec.prompt, &rec.chosen)?;
                let r_r = self.net.reward(&rec.prompt, &rec.rejected)?;
                let a = loss::advantage_pair(&self.advantage, rec, r_c, r_r, e);
                Ok((a.chosen, a.rejected))
            }
        }
    }

    fn kind(&self) -> ScorerKind {
        match self.mode {
            ModelKind::Rm => ScorerKind::Reward,
            ModelKind::Am => ScorerKind::Advantage,
        }
    }
}

/// View of a checkpoint that scores with `r(x, y)` only.
#[derive(Debug, Clone, Copy)]
pub struct RewardHead<'a>(pub &'a ScoreCheckpoint);

impl Scorer for RewardHead<'_> {
    fn score(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        self.0.net.reward(prompt, response)
    }

    fn kind(&self) -> ScorerKind {
        ScorerKind::Reward
    }
}
