//! Ranking accuracy, calibration, per-category score moments and
//! oracle-judged win/lose/tie rates.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::{ComparisonRecord, Episode, ExpertPair};
use crate::numkernel::{mean, sigmoid, std_dev};
use crate::policy::SoftmaxPolicy;
use crate::scoremodel::Scorer;
use crate::{Error, Result};

fn pair_deltas(scorer: &dyn Scorer, pairs: &[ComparisonRecord]) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::Empty("comparison pairs"));
    }
    pairs
        .iter()
        .map(|p| scorer.score_pair(p).map(|(c, r)| c - r))
        .collect()
}

/// Fraction of pairs where the chosen response scores higher; exact ties count half.
pub fn pairwise_accuracy(scorer: &dyn Scorer, pairs: &[ComparisonRecord]) -> Result<f64> {
    let deltas = pair_deltas(scorer, pairs)?;
    Ok(accuracy_from_deltas(&deltas))
}

pub fn accuracy_from_deltas(deltas: &[f64]) -> f64 {
    let credit: f64 = deltas
        .iter()
        .map(|&d| if d > 0.0 { 1.0 } else if d == 0.0 { 0.5 } else { 0.0 })
        .sum();
    credit / deltas.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub confidence_mean: f64,
    pub empirical_accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    /// Percentage points.
    pub ece: f64,
    pub accuracy: f64,
}

/// ECE over `(confidence, outcome)` predictions with equal-width bins on
/// `[0.5, 1]`. Empty bins are reported with zero count.
pub fn ece_from_predictions(predictions: &[(f64, f64)], n_bins: usize) -> Result<CalibrationReport> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("n_bins must be at least 1".into()));
    }
    if predictions.is_empty() {
        return Err(Error::Empty("calibration predictions"));
    }
    let mut conf = vec![0.0; n_bins];
    let mut hits = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for &(p, outcome) in predictions {
        let b = (((p - 0.5) / 0.5 * n_bins as f64) as usize).min(n_bins - 1);
        conf[b] += p;
        hits[b] += outcome;
        counts[b] += 1;
    }
    let n = predictions.len() as f64;
    let mut ece = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            if counts[b] == 0 {
                return CalibrationBin {
                    confidence_mean: 0.0,
                    empirical_accuracy: 0.0,
                    count: 0,
                };
            }
            let c = counts[b] as f64;
            let (cm, acc) = (conf[b] / c, hits[b] / c);
            ece += c / n * (acc - cm).abs();
            CalibrationBin {
                confidence_mean: cm,
                empirical_accuracy: acc,
                count: counts[b],
            }
        })
        .collect();
    let accuracy = predictions.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(CalibrationReport {
        bins,
        ece: 100.0 * ece,
        accuracy,
    })
}

/// Oriented `(sigma(|delta|), outcome)` with ties scored as half a hit.
fn oriented(deltas: &[f64]) -> Vec<(f64, f64)> {
    deltas
        .iter()
        .map(|&d| {
            let outcome = if d > 0.0 { 1.0 } else if d == 0.0 { 0.5 } else { 0.0 };
            (sigmoid(d.abs()), outcome)
        })
        .collect()
}

pub fn expected_calibration_error(scorer: &dyn Scorer, pairs: &[ComparisonRecord], n_bins: usize) -> Result<CalibrationReport> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("n_bins must be at least 1".into()));
    }
    let deltas = pair_deltas(scorer, pairs)?;
    ece_from_predictions(&oriented(&deltas), n_bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mean_delta: f64,
    pub accuracy: f64,
    /// `1 / (1 + e^-mean_delta)`.
    pub ideal: f64,
    pub count: usize,
}

/// Accuracy against oriented score difference, equal-width bins on
/// `[0, max |delta|]`; empty bins are omitted.
pub fn calibration_curve_from_deltas(deltas: &[f64], n_bins: usize) -> Result<Vec<CurvePoint>> {
    if n_bins == 0 {
        return Err(Error::InvalidConfig("n_bins must be at least 1".into()));
    }
    if deltas.is_empty() {
        return Err(Error::Empty("comparison pairs"));
    }
    let max = deltas.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let width = if max > 0.0 { max / n_bins as f64 } else { 1.0 };
    let mut sum = vec![0.0; n_bins];
    let mut hits = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&d, (_, outcome)) in deltas.iter().zip(oriented(deltas)) {
        let b = ((d.abs() / width) as usize).min(n_bins - 1);
        sum[b] += d.abs();
        hits[b] += outcome;
        counts[b] += 1;
    }
    Ok((0..n_bins)
        .filter(|&b| counts[b] > 0)
        .map(|b| {
            let c = counts[b] as f64;
            let mean_delta = sum[b] / c;
            CurvePoint {
                mean_delta,
                accuracy: hits[b] / c,
                ideal: sigmoid(mean_delta),
                count: counts[b],
            }
        })
        .collect())
}

pub fn calibration_curve(scorer: &dyn Scorer, pairs: &[ComparisonRecord], n_bins: usize) -> Result<Vec<CurvePoint>> {
    calibration_curve_from_deltas(&pair_deltas(scorer, pairs)?, n_bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMoments {
    pub category: usize,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentsReport {
    pub categories: Vec<CategoryMoments>,
    /// `max_c mean_c - min_c mean_c`.
    pub mean_spread: f64,
    /// `max_c |mean_c - median_c mean_c|`.
    pub mean_deviation: f64,
    /// `max_c std_c / min_c std_c` (1 when every std is zero).
    pub std_ratio: f64,
}

pub fn moments_from_scores(scores: &[(usize, f64)]) -> Result<MomentsReport> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(c, s) in scores {
        groups.entry(c).or_default().push(s);
    }
    if groups.is_empty() {
        return Err(Error::Empty("category scores"));
    }
    let mut categories = Vec::with_capacity(groups.len());
    for (category, xs) in &groups {
        if xs.len() < 2 {
            return Err(Error::InvalidConfig(alloc::format!(
                "category {category} has {} score(s), need at least 2",
                xs.len()
            )));
        }
        categories.push(CategoryMoments {
            category: *category,
            mean: mean(xs),
            std: std_dev(xs),
            count: xs.len(),
        });
    }
    let mut means: Vec<f64> = categories.iter().map(|c| c.mean).collect();
    means.sort_by(f64::total_cmp);
    let median = if means.len() % 2 == 1 {
        means[means.len() / 2]
    } else {
        0.5 * (means[means.len() / 2 - 1] + means[means.len() / 2])
    };
    let mean_spread = means[means.len() - 1] - means[0];
    let mean_deviation = means.iter().map(|m| (m - median).abs()).fold(0.0, f64::max);
    let max_std = categories.iter().map(|c| c.std).fold(0.0, f64::max);
    let min_std = categories.iter().map(|c| c.std).fold(f64::INFINITY, f64::min);
    let std_ratio = if max_std == 0.0 { 1.0 } else { max_std / min_std };
    Ok(MomentsReport {
        categories,
        mean_spread,
        mean_deviation,
        std_ratio,
    })
}

/// Moments of the scorer's values over every candidate of every episode.
pub fn category_moments(scorer: &dyn Scorer, episodes: &[Episode]) -> Result<MomentsReport> {
    let mut scores = Vec::with_capacity(episodes.len() * 5);
    for ep in episodes {
        for c in &ep.candidates {
            scores.push((ep.prompt.category, scorer.score(&ep.prompt, c)?));
        }
    }
    moments_from_scores(&scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinLossReport {
    /// Percentages.
    pub win: f64,
    pub lose: f64,
    pub tie: f64,
    pub n: usize,
    pub tie_epsilon: f64,
}

impl WinLossReport {
    pub fn from_deltas(deltas: &[f64], tie_epsilon: f64) -> Self {
        let n = deltas.len();
        let win = deltas.iter().filter(|&&d| d > tie_epsilon).count();
        let lose = deltas.iter().filter(|&&d| d < -tie_epsilon).count();
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        Self {
            win: pct(win),
            lose: pct(lose),
            tie: if n == 0 { 100.0 } else { pct(n - win - lose) },
            n,
            tie_epsilon,
        }
    }

    pub fn win_minus_lose(&self) -> f64 {
        self.win - self.lose
    }
}

/// Each policy plays its greedy candidate; the oracle utilities decide.
pub fn win_rate_vs_reference(policy: &SoftmaxPolicy, reference: &SoftmaxPolicy, episodes: &[Episode], tie_epsilon: f64) -> WinLossReport {
    let deltas: Vec<f64> = episodes
        .iter()
        .map(|ep| ep.true_utilities[policy.greedy(ep)] - ep.true_utilities[reference.greedy(ep)])
        .collect();
    WinLossReport::from_deltas(&deltas, tie_epsilon)
}

/// Greedy candidate against the stored expert response.
pub fn win_rate_vs_expert(policy: &SoftmaxPolicy, pairs: &[ExpertPair], tie_epsilon: f64) -> WinLossReport {
    let deltas: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let u = &p.episode.true_utilities;
            u[policy.greedy(&p.episode)] - u[p.expert_index]
        })
        .collect();
    WinLossReport::from_deltas(&deltas, tie_epsilon)
}

/// Mean score of the policy's greedy candidates.
pub fn mean_greedy_score(policy: &SoftmaxPolicy, episodes: &[Episode], scorer: &dyn Scorer) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Empty("episodes"));
    }
    let mut total = 0.0;
    for ep in episodes {
        total += scorer.score(&ep.prompt, &ep.candidates[policy.greedy(ep)])?;
    }
    Ok(total / episodes.len() as f64)
}

/// Mean oracle utility of the policy's greedy candidates.
pub fn mean_greedy_utility(policy: &SoftmaxPolicy, episodes: &[Episode]) -> f64 {
    mean(&episodes.iter().map(|ep| ep.true_utilities[policy.greedy(ep)]).collect::<Vec<_>>())
}
