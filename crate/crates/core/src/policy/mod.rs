//! Softmax policy over candidate pools: teacher forcing, rejection sampling,
//! and clipped PPO with an optional rehearsal term.

mod ppo;
mod rejection;
mod sft;
mod softmax;

pub use ppo::{combined_loss_and_grad, surrogate_loss_and_grad, PpoSettings, PpoTrainer, Rollout, ScoreMode, StepStats};
pub use rejection::{rejection_sampling_iteration, score_quantile};
pub use sft::{nll_and_grad, sft_update, Target};
pub use softmax::{feature_len, kl_to_init, pair_features, EpisodeFeatures, SoftmaxPolicy};
