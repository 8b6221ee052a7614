use alloc::vec;
use alloc::vec::Vec;

use super::advantage::AdvantageConfig;
use super::net::ScoreNet;
use crate::env::ComparisonRecord;
use crate::numkernel::{sigmoid, softplus};
use crate::{Error, Result};

fn check_batch(net: &ScoreNet, batch: &[ComparisonRecord]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("comparison batch"));
    }
    for rec in batch {
        net.check(&rec.prompt, &rec.chosen)?;
        net.check(&rec.prompt, &rec.rejected)?;
    }
    Ok(())
}

/// Pairwise ranking loss `-mean log sigma(r_c - r_r)` and its gradient.
/// Expected-head parameters get zero gradient.
pub fn rm_loss_and_grad(net: &ScoreNet, batch: &[ComparisonRecord]) -> Result<(f64, Vec<f64>)> {
    check_batch(net, batch)?;
    let tower = net.layout.reward_tower();
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for rec in batch {
        let tc = net.reward_trace(&rec.prompt, &rec.chosen);
        let tr = net.reward_trace(&rec.prompt, &rec.rejected);
        let diff = tc.output - tr.output;
        loss += softplus(-diff);
        // d softplus(-diff) / d diff = -sigma(-diff)
        let g = -sigmoid(-diff) * scale;
        tower.backward(&net.params, &tc, g, &mut grad);
        tower.backward(&net.params, &tr, -g, &mut grad);
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("reward-model loss"));
    }
    Ok((loss, grad))
}

/// Per-record advantage terms shared by the loss and by evaluation.
pub(crate) struct AdvantagePair {
    pub chosen: f64,
    pub rejected: f64,
    pub chosen_coef: f64,
    pub rejected_coef: f64,
}

pub(crate) fn advantage_pair(cfg: &AdvantageConfig, rec: &ComparisonRecord, r_c: f64, r_r: f64, e: f64) -> AdvantagePair {
    let cur = rec.source_is_current();
    let chosen_coef = cfg.reward_coefficient(rec.chosen_current_logprob, rec.chosen_logprob, cur);
    let rejected_coef = cfg.reward_coefficient(rec.rejected_current_logprob, rec.rejected_logprob, cur);
    AdvantagePair {
        chosen: cfg.combine(r_c, e, chosen_coef),
        rejected: cfg.combine(r_r, e, rejected_coef),
        chosen_coef,
        rejected_coef,
    }
}

/// Ranking plus bounding loss on advantages:
/// `-mean[log sigma(a_c - a_r) + log sigma(m - a_c) + log sigma(m + a_r)]`.
pub fn am_loss_and_grad(net: &ScoreNet, batch: &[ComparisonRecord], cfg: &AdvantageConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    check_batch(net, batch)?;
    for rec in batch {
        for lp in [
            rec.chosen_logprob,
            rec.rejected_logprob,
            rec.chosen_current_logprob,
            rec.rejected_current_logprob,
        ] {
            if !lp.is_finite() {
                return Err(Error::NonFinite("log-probability"));
            }
        }
    }
    let rt = net.layout.reward_tower();
    let et = net.layout.expected_tower();
    let m = cfg.margin;
    let share = cfg.expected_share();
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; net.params.len()];
    let mut loss = 0.0;
    for rec in batch {
        let tc = net.reward_trace(&rec.prompt, &rec.chosen);
        let tr = net.reward_trace(&rec.prompt, &rec.rejected);
        let te = net.expected_trace(&rec.prompt);
        let a = advantage_pair(cfg, rec, tc.output, tr.output, te.output);
        let diff = a.chosen - a.rejected;
        loss += softplus(-diff) + softplus(a.chosen - m) + softplus(-m - a.rejected);
        let rank = sigmoid(-diff);
        let d_ac = -rank + sigmoid(a.chosen - m);
        let d_ar = rank - sigmoid(-m - a.rejected);
        let mut d_e = -share * (d_ac + d_ar);
        if cfg.expected_regression > 0.0 {
            let target = 0.5 * (tc.output + tr.output);
            let resid = te.output - target;
            loss += cfg.expected_regression * resid * resid;
            d_e += 2.0 * cfg.expected_regression * resid;
        }
        rt.backward(&net.params, &tc, a.chosen_coef * d_ac * scale, &mut grad);
        rt.backward(&net.params, &tr, a.rejected_coef * d_ar * scale, &mut grad);
        et.backward(&net.params, &te, d_e * scale, &mut grad);
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::NonFinite("advantage-model loss"));
    }
    Ok((loss, grad))
}
