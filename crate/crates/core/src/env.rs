//! Synthetic preference world.
//!
//! Prompts live in `d`-dimensional feature space, grouped into task
//! categories. Candidate responses scatter around a hidden linear map of the
//! prompt; their ground-truth utility is the category offset minus the mean
//! squared residual. Annotators are Bradley-Terry on that utility, except in
//! categories with a label bias where a response carrying the exploit flag
//! wins outright some of the time.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::numkernel::{sigmoid, RandomStream};
use crate::policy::SoftmaxPolicy;
use crate::scoremodel::{Scorer, ScorerKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCategory {
    pub id: usize,
    pub quality_offset: f64,
    pub candidate_noise: f64,
    pub label_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: u64,
    pub category: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub content: Vec<f64>,
    pub exploit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: u64,
    pub prompt: Prompt,
    pub candidates: Vec<Response>,
    pub true_utilities: Vec<f64>,
}

impl Episode {
    pub fn best_index(&self) -> usize {
        argmax(&self.true_utilities)
    }
}

/// One preference pair together with the log-probabilities of both
/// responses under the policy that generated them and under the policy the
/// advantage model treats as current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub id: u64,
    pub prompt: Prompt,
    pub chosen: Response,
    pub rejected: Response,
    pub source_policy: usize,
    pub chosen_logprob: f64,
    pub rejected_logprob: f64,
    pub chosen_current_logprob: f64,
    pub rejected_current_logprob: f64,
}

impl ComparisonRecord {
    pub fn source_is_current(&self) -> bool {
        self.source_policy == CURRENT_SOURCE
    }
}

/// Index of the source policy treated as the current policy.
pub const CURRENT_SOURCE: usize = 0;

/// A held-out prompt whose expert response is the best candidate of its pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPair {
    pub id: u64,
    pub episode: Episode,
    pub expert_index: usize,
}

impl ExpertPair {
    pub fn expert(&self) -> &Response {
        &self.episode.candidates[self.expert_index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub dim: usize,
    pub categories: usize,
    pub pool_size: usize,
    pub prompt_spread: f64,
    pub exploit_prob: f64,
    pub seed: u64,
    /// Replaces the default category schedule when present.
    pub category_table: Option<Vec<TaskCategory>>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            categories: 6,
            pool_size: 5,
            prompt_spread: 0.5,
            exploit_prob: 0.2,
            seed: 1,
            category_table: None,
        }
    }
}

/// A fully materialized environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub dim: usize,
    pub pool_size: usize,
    pub prompt_spread: f64,
    pub exploit_prob: f64,
    pub seed: u64,
    /// Row-major `dim x dim`.
    pub hidden_map: Vec<f64>,
    pub categories: Vec<TaskCategory>,
    pub category_means: Vec<Vec<f64>>,
}

fn linspace(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        return 0.5 * (lo + hi);
    }
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}

/// Offsets evenly spaced in [-2, 2], noise in [0.2, 1.5], label bias 0.3 on
/// the two noisiest categories.
pub fn default_category_table(n: usize) -> Vec<TaskCategory> {
    (0..n)
        .map(|i| TaskCategory {
            id: i,
            quality_offset: linspace(-2.0, 2.0, n, i),
            candidate_noise: linspace(0.2, 1.5, n, i),
            label_bias: if i + 2 >= n { 0.3 } else { 0.0 },
        })
        .collect()
}

fn validate_categories(table: &[TaskCategory]) -> Result<()> {
    if table.is_empty() {
        return Err(Error::Empty("category table"));
    }
    for (i, c) in table.iter().enumerate() {
        if c.id != i {
            return Err(Error::InvalidConfig(format!("category ids must be dense, found {} at {i}", c.id)));
        }
        if !(c.candidate_noise > 0.0) || !c.candidate_noise.is_finite() {
            return Err(Error::InvalidConfig(format!("category {i}: candidate_noise must be > 0")));
        }
        if !(0.0..=0.5).contains(&c.label_bias) {
            return Err(Error::InvalidConfig(format!("category {i}: label_bias must lie in [0, 0.5]")));
        }
        if !c.quality_offset.is_finite() {
            return Err(Error::NonFinite("quality_offset"));
        }
    }
    Ok(())
}

impl EnvParams {
    pub fn generate(cfg: &EnvConfig) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        if cfg.pool_size < 2 {
            return Err(Error::InvalidConfig("pool_size must be at least 2".into()));
        }
        let categories = match &cfg.category_table {
            Some(t) => t.clone(),
            None => default_category_table(cfg.categories),
        };
        validate_categories(&categories)?;
        let d = cfg.dim;
        let root = RandomStream::new(cfg.seed).split_named("env");
        let mut map_rng = root.split_named("hidden_map");
        let scale = libm::sqrt(1.0 / d as f64);
        let hidden_map = (0..d * d).map(|_| scale * map_rng.normal()).collect();
        let mut mean_rng = root.split_named("category_means");
        let category_means = categories
            .iter()
            .map(|_| (0..d).map(|_| mean_rng.normal()).collect())
            .collect();
        Ok(Self {
            dim: d,
            pool_size: cfg.pool_size,
            prompt_spread: cfg.prompt_spread,
            exploit_prob: cfg.exploit_prob,
            seed: cfg.seed,
            hidden_map,
            categories,
            category_means,
        })
    }

    pub fn category(&self, id: usize) -> Result<&TaskCategory> {
        self.categories.get(id).ok_or(Error::IndexOutOfRange {
            what: "category table",
            index: id,
            len: self.categories.len(),
        })
    }

    /// `T x`.
    pub fn target(&self, features: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                self.hidden_map[i * d..(i + 1) * d]
                    .iter()
                    .zip(features)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }
}

/// Ground-truth utility `b_c - |y - T x|^2 / d`; the exploit flag is ignored.
pub fn oracle_utility(params: &EnvParams, prompt: &Prompt, response: &Response) -> Result<f64> {
    let d = params.dim;
    for (what, len) in [("prompt features", prompt.features.len()), ("response content", response.content.len())] {
        if len != d {
            return Err(Error::DimensionMismatch {
                what,
                expected: d,
                actual: len,
            });
        }
    }
    let cat = params.category(prompt.category)?;
    let target = params.target(&prompt.features);
    let sq: f64 = response
        .content
        .iter()
        .zip(&target)
        .map(|(y, t)| (y - t) * (y - t))
        .sum();
    Ok(cat.quality_offset - sq / d as f64)
}

/// Draws one prompt of `category` and its candidate pool.
pub fn sample_episode(
    params: &EnvParams,
    category: usize,
    pool_size: usize,
    id: u64,
    rng: &mut RandomStream,
) -> Result<Episode> {
    if pool_size < 2 {
        return Err(Error::InvalidConfig("pool_size must be at least 2".into()));
    }
    let cat = params.category(category)?.clone();
    let mu = &params.category_means[category];
    let features: Vec<f64> = mu.iter().map(|m| m + params.prompt_spread * rng.normal()).collect();
    let prompt = Prompt {
        id,
        category,
        features,
    };
    let target = params.target(&prompt.features);
    let mut candidates = Vec::with_capacity(pool_size);
    let mut true_utilities = Vec::with_capacity(pool_size);
    for i in 0..pool_size {
        let content: Vec<f64> = target
            .iter()
            .map(|t| t + cat.candidate_noise * rng.normal())
            .collect();
        let exploit = rng.bernoulli(params.exploit_prob);
        let response = Response {
            id: id * pool_size as u64 + i as u64,
            content,
            exploit,
        };
        true_utilities.push(oracle_utility(params, &prompt, &response)?);
        candidates.push(response);
    }
    Ok(Episode {
        id,
        prompt,
        candidates,
        true_utilities,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    A,
    B,
}

/// Simulated annotator: style-biased with probability `label_bias` when the
/// exploit flags differ, Bradley-Terry on utility otherwise.
pub fn preference_label(
    utility_a: f64,
    utility_b: f64,
    exploit_a: bool,
    exploit_b: bool,
    label_bias: f64,
    rng: &mut RandomStream,
) -> Winner {
    if exploit_a != exploit_b && rng.bernoulli(label_bias) {
        return if exploit_a { Winner::A } else { Winner::B };
    }
    if rng.bernoulli(sigmoid(utility_a - utility_b)) {
        Winner::A
    } else {
        Winner::B
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub rm_train: usize,
    pub rm_test: usize,
    pub ppo_train: usize,
    pub ppo_test: usize,
    pub forget: usize,
    pub sft_train: usize,
    /// Total number of source policies; policy 0 is the current one.
    pub source_policies: usize,
    /// Standard deviation of source-policy weights.
    pub source_policy_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            rm_train: 20_000,
            rm_test: 2_000,
            ppo_train: 2_000,
            ppo_test: 500,
            forget: 500,
            sft_train: 2_000,
            source_policies: 2,
            source_policy_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    RmTrain,
    RmTest,
    PpoTrain,
    PpoTest,
    Forget,
    SftTrain,
}

impl Split {
    pub const ALL: [Split; 6] = [
        Split::RmTrain,
        Split::RmTest,
        Split::PpoTrain,
        Split::PpoTest,
        Split::Forget,
        Split::SftTrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Split::RmTrain => "rm_train",
            Split::RmTest => "rm_test",
            Split::PpoTrain => "ppo_train",
            Split::PpoTest => "ppo_test",
            Split::Forget => "forget",
            Split::SftTrain => "sft_train",
        }
    }

    fn count(self, cfg: &DataConfig) -> usize {
        match self {
            Split::RmTrain => cfg.rm_train,
            Split::RmTest => cfg.rm_test,
            Split::PpoTrain => cfg.ppo_train,
            Split::PpoTest => cfg.ppo_test,
            Split::Forget => cfg.forget,
            Split::SftTrain => cfg.sft_train,
        }
    }

    /// First prompt id of this split; splits occupy consecutive id ranges.
    pub fn id_base(self, cfg: &DataConfig) -> u64 {
        let mut base = 0u64;
        for s in Split::ALL {
            if s == self {
                return base;
            }
            base += s.count(cfg) as u64;
        }
        unreachable!()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Datasets {
    pub rm_train: Vec<ComparisonRecord>,
    pub rm_test: Vec<ComparisonRecord>,
    pub ppo_train: Vec<Episode>,
    pub ppo_test: Vec<Episode>,
    pub forget: Vec<ExpertPair>,
    pub sft_train: Vec<ExpertPair>,
    pub source_policies: Vec<SoftmaxPolicy>,
}

/// Source policies used to pick the compared candidates.
pub fn source_policies(params: &EnvParams, cfg: &DataConfig, rng: &RandomStream) -> Vec<SoftmaxPolicy> {
    (0..cfg.source_policies)
        .map(|k| {
            let mut r = rng.split_named("source_policy").split(k as u64);
            let mut p = SoftmaxPolicy::zeros(params.dim);
            for w in p.weights.iter_mut() {
                *w = cfg.source_policy_scale * r.normal();
            }
            p
        })
        .collect()
}

fn split_episode(params: &EnvParams, cfg: &DataConfig, split: Split, index: usize, rng: &RandomStream) -> Result<(Episode, RandomStream)> {
    let mut r = rng.split_named(split.name()).split(index as u64);
    let category = r.below(params.categories.len());
    let id = split.id_base(cfg) + index as u64;
    let ep = sample_episode(params, category, params.pool_size, id, &mut r)?;
    Ok((ep, r))
}

/// Re-creates the candidate pool behind comparison record `index` of `split`.
pub fn regenerate_episode(params: &EnvParams, cfg: &DataConfig, split: Split, index: usize, rng: &RandomStream) -> Result<Episode> {
    split_episode(params, cfg, split, index, rng).map(|(ep, _)| ep)
}

fn comparison(
    params: &EnvParams,
    cfg: &DataConfig,
    split: Split,
    index: usize,
    policies: &[SoftmaxPolicy],
    rng: &RandomStream,
) -> Result<ComparisonRecord> {
    let (ep, mut r) = split_episode(params, cfg, split, index, rng)?;
    let source = index % policies.len();
    let logp = policies[source].log_probs(&ep);
    let current = policies[CURRENT_SOURCE].log_probs(&ep);
    let probs: Vec<f64> = logp.iter().map(|&l| libm::exp(l)).collect();
    let first = r.categorical(&probs);
    let mut rest = probs.clone();
    rest[first] = 0.0;
    let second = r.categorical(&rest);
    let bias = params.category(ep.prompt.category)?.label_bias;
    let (a, b) = (&ep.candidates[first], &ep.candidates[second]);
    let winner = preference_label(
        ep.true_utilities[first],
        ep.true_utilities[second],
        a.exploit,
        b.exploit,
        bias,
        &mut r,
    );
    let (c, rj) = match winner {
        Winner::A => (first, second),
        Winner::B => (second, first),
    };
    Ok(ComparisonRecord {
        id: ep.id,
        chosen: ep.candidates[c].clone(),
        rejected: ep.candidates[rj].clone(),
        source_policy: source,
        chosen_logprob: logp[c],
        rejected_logprob: logp[rj],
        chosen_current_logprob: current[c],
        rejected_current_logprob: current[rj],
        prompt: ep.prompt,
    })
}

fn expert_pair(params: &EnvParams, cfg: &DataConfig, split: Split, index: usize, rng: &RandomStream) -> Result<ExpertPair> {
    let (episode, _) = split_episode(params, cfg, split, index, rng)?;
    Ok(ExpertPair {
        id: episode.id,
        expert_index: episode.best_index(),
        episode,
    })
}

/// Materializes every split. Each record draws from its own sub-stream keyed
/// by (split, index), so the output does not depend on generation order.
pub fn build_datasets(params: &EnvParams, cfg: &DataConfig, rng: &RandomStream) -> Result<Datasets> {
    for s in [Split::RmTrain, Split::RmTest, Split::PpoTrain, Split::PpoTest, Split::Forget] {
        if s.count(cfg) == 0 {
            return Err(Error::InvalidConfig(format!("{} count must be positive", s.name())));
        }
    }
    if cfg.source_policies == 0 {
        return Err(Error::InvalidConfig("source_policies must be positive".into()));
    }
    let policies = source_policies(params, cfg, rng);
    let comparisons = |split: Split| -> Result<Vec<ComparisonRecord>> {
        (0..split.count(cfg))
            .map(|i| comparison(params, cfg, split, i, &policies, rng))
            .collect()
    };
    let episodes = |split: Split| -> Result<Vec<Episode>> {
        (0..split.count(cfg))
            .map(|i| split_episode(params, cfg, split, i, rng).map(|(e, _)| e))
            .collect()
    };
    let experts = |split: Split| -> Result<Vec<ExpertPair>> {
        (0..split.count(cfg))
            .map(|i| expert_pair(params, cfg, split, i, rng))
            .collect()
    };
    Ok(Datasets {
        rm_train: comparisons(Split::RmTrain)?,
        rm_test: comparisons(Split::RmTest)?,
        ppo_train: episodes(Split::PpoTrain)?,
        ppo_test: episodes(Split::PpoTest)?,
        forget: experts(Split::Forget)?,
        sft_train: experts(Split::SftTrain)?,
        source_policies: policies,
    })
}

/// Scores responses by their ground-truth utility.
#[derive(Debug, Clone, Copy)]
pub struct OracleScorer<'a> {
    pub params: &'a EnvParams,
}

impl Scorer for OracleScorer<'_> {
    fn score(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        oracle_utility(self.params, prompt, response)
    }

    fn kind(&self) -> ScorerKind {
        ScorerKind::Oracle
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tiny_params() -> EnvParams {
        EnvParams {
            dim: 2,
            pool_size: 2,
            prompt_spread: 0.5,
            exploit_prob: 0.2,
            seed: 0,
            hidden_map: vec![1.0, 0.0, 0.0, 1.0],
            categories: vec![TaskCategory {
                id: 0,
                quality_offset: 0.0,
                candidate_noise: 1.0,
                label_bias: 0.0,
            }],
            category_means: vec![vec![0.0, 0.0]],
        }
    }

    fn prompt(features: Vec<f64>) -> Prompt {
        Prompt {
            id: 0,
            category: 0,
            features,
        }
    }

    fn response(content: Vec<f64>, exploit: bool) -> Response {
        Response {
            id: 0,
            content,
            exploit,
        }
    }

    #[test]
    fn oracle_zero_residual_and_hand_value() {
        let p = tiny_params();
        let x = prompt(vec![1.0, 0.0]);
        assert_eq!(oracle_utility(&p, &x, &response(vec![1.0, 0.0], false)).unwrap(), 0.0);
        assert_eq!(oracle_utility(&p, &x, &response(vec![0.0, 0.0], false)).unwrap(), -0.5);
    }

    #[test]
    fn oracle_ignores_exploit_flag() {
        let p = tiny_params();
        let x = prompt(vec![0.3, -0.7]);
        let a = oracle_utility(&p, &x, &response(vec![0.1, 0.2], false)).unwrap();
        let b = oracle_utility(&p, &x, &response(vec![0.1, 0.2], true)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_dimension_mismatch() {
        let p = tiny_params();
        let x = prompt(vec![0.3, -0.7, 1.0]);
        assert!(matches!(
            oracle_utility(&p, &x, &response(vec![0.1, 0.2], false)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn episode_shape_and_determinism() {
        let params = EnvParams::generate(&EnvConfig::default()).unwrap();
        let mut r1 = RandomStream::new(9);
        let mut r2 = RandomStream::new(9);
        let a = sample_episode(&params, 2, 5, 0, &mut r1).unwrap();
        let b = sample_episode(&params, 2, 5, 0, &mut r2).unwrap();
        assert_eq!(a.candidates.len(), 5);
        assert_eq!(a.true_utilities.len(), 5);
        assert_eq!(a, b);
        assert!(sample_episode(&params, 2, 1, 0, &mut r1).is_err());
    }

    #[test]
    fn vanishing_noise_utilities_approach_offset() {
        let mut table = default_category_table(2);
        table[1].candidate_noise = 1e-9;
        let cfg = EnvConfig {
            categories: 2,
            category_table: Some(table),
            ..EnvConfig::default()
        };
        let params = EnvParams::generate(&cfg).unwrap();
        let ep = sample_episode(&params, 1, 5, 0, &mut RandomStream::new(3)).unwrap();
        for u in ep.true_utilities {
            assert!((u - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_labels_are_fair() {
        let mut r = RandomStream::new(4);
        let n = 100_000;
        let wins = (0..n)
            .filter(|_| preference_label(0.3, 0.3, false, false, 0.0, &mut r) == Winner::A)
            .count();
        assert!((wins as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn margin_label_rate() {
        let mut r = RandomStream::new(5);
        let n = 200_000;
        let wins = (0..n)
            .filter(|_| preference_label(2.5, 0.0, false, false, 0.0, &mut r) == Winner::A)
            .count();
        // sigma(2.5) = 0.924142; three standard errors ~ 0.0018
        assert!((wins as f64 / n as f64 - 0.924_142).abs() < 0.0018);
    }

    #[test]
    fn saturated_bias_always_favours_exploit() {
        let mut r = RandomStream::new(6);
        for _ in 0..1000 {
            assert_eq!(preference_label(-5.0, 5.0, true, false, 1.0, &mut r), Winner::A);
        }
    }

    #[test]
    fn default_schedule() {
        let t = default_category_table(6);
        assert_eq!(t[0].quality_offset, -2.0);
        assert_eq!(t[5].quality_offset, 2.0);
        assert!((t[0].candidate_noise - 0.2).abs() < 1e-15);
        assert!((t[5].candidate_noise - 1.5).abs() < 1e-15);
        let biased: Vec<usize> = t.iter().filter(|c| c.label_bias > 0.0).map(|c| c.id).collect();
        assert_eq!(biased, [4, 5]);
    }

    #[test]
    fn rejects_bad_category_table() {
        let mut table = default_category_table(3);
        table[1].label_bias = 0.7;
        let cfg = EnvConfig {
            categories: 3,
            category_table: Some(table),
            ..EnvConfig::default()
        };
        assert!(EnvParams::generate(&cfg).is_err());
    }
}
