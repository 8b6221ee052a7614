use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{am_loss_and_grad, rm_loss_and_grad, AdvantageConfig, ModelKind, ScoreCheckpoint, ScoreLayout, ScoreNet};
use crate::env::ComparisonRecord;
use crate::numkernel::{adam_step, AdamState, LrSchedule, RandomStream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrainSettings {
    /// Peak learning rate of the warm-up/cosine schedule.
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
}

impl Default for ScoreTrainSettings {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch_size: 64,
            epochs: 1,
            hidden: alloc::vec![32, 32],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Mini-batch Adam over shuffled comparisons. The network is initialized
/// from `rng.split_named("init")` and batches are ordered by
/// `rng.split_named("shuffle")`.
pub fn train_score_model(
    mode: ModelKind,
    data: &[ComparisonRecord],
    advantage: &AdvantageConfig,
    settings: &ScoreTrainSettings,
    rng: &RandomStream,
) -> Result<(ScoreCheckpoint, Vec<TrainLogRow>)> {
    if data.is_empty() {
        return Err(Error::Empty("score-model training set"));
    }
    if settings.batch_size == 0 || settings.epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
    }
    if mode == ModelKind::Am {
        advantage.validate()?;
    }
    let dim = data[0].prompt.features.len();
    let layout = ScoreLayout {
        dim,
        hidden: settings.hidden.clone(),
    };
    let mut net = ScoreNet::init(layout, &mut rng.split_named("init"));
    let per_epoch = data.len().div_ceil(settings.batch_size);
    let total = per_epoch * settings.epochs;
    let schedule = LrSchedule::warmup_cosine(settings.lr, total);
    let mut adam = AdamState::new(net.params.len());
    let mut log = Vec::with_capacity(total);
    let mut batch: Vec<ComparisonRecord> = Vec::with_capacity(settings.batch_size);
    let mut step = 0;
    for epoch in 0..settings.epochs {
        let order = rng.split_named("shuffle").split(epoch as u64).permutation(data.len());
        for chunk in order.chunks(settings.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            let (loss, grad) = match mode {
                ModelKind::Rm => rm_loss_and_grad(&net, &batch),
                ModelKind::Am => am_loss_and_grad(&net, &batch, advantage),
            }
            .map_err(|e| e.at_step(step))?;
            let lr = schedule.rate(step);
            adam_step(&mut net.params, &grad, &mut adam, lr).map_err(|e| e.at_step(step))?;
            log.push(TrainLogRow { step, loss, lr });
            step += 1;
        }
    }
    Ok((
        ScoreCheckpoint {
            mode,
            net,
            advantage: advantage.clone(),
            seed: rng.seed(),
            steps: step,
        },
        log,
    ))
}
