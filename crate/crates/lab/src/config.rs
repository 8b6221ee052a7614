//! Run configuration: one JSON document of blocks, every field defaulted,
//! unknown keys rejected, `block.key=value` overrides applied last.

use std::path::{Path, PathBuf};

use rlstab_core::env::{DataConfig, EnvConfig, TaskCategory};
use rlstab_core::policy::{PpoSettings, ScoreMode};
use rlstab_core::rehearsal::KMeansSettings;
use rlstab_core::scoremodel::{AdvantageConfig, ScoreTrainSettings};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{invalid, LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub environment: EnvironmentBlock,
    pub data: DataBlock,
    pub score: ScoreBlock,
    pub sft: SftBlock,
    pub ppo: PpoBlock,
    pub eval: EvalBlock,
    pub paths: PathsBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentBlock {
    pub dim: usize,
    pub categories: usize,
    pub pool_size: usize,
    pub prompt_spread: f64,
    pub exploit_prob: f64,
    pub category_table: Option<Vec<TaskCategory>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    pub rm_train: usize,
    pub rm_test: usize,
    pub ppo_train: usize,
    pub ppo_test: usize,
    pub forget: usize,
    pub sft_train: usize,
    /// Current policy plus K alternates.
    pub source_policies: usize,
    pub source_policy_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreBlock {
    pub margin: f64,
    pub n: usize,
    pub weight_clip: [f64; 2],
    pub expected_regression: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftBlock {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoBlock {
    pub score_mode: ScoreMode,
    pub beta: f64,
    pub clip: f64,
    pub steps: usize,
    pub batch_prompts: usize,
    pub lr: f64,
    pub update_epochs: usize,
    pub rehearsal: bool,
    pub gamma: f64,
    pub rehearsal_fraction: f64,
    /// Cluster count c.
    pub clusters: usize,
    /// Records kept per cluster.
    pub top_k: usize,
    pub ma_decay: f64,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub bins: usize,
    pub tie_epsilon: f64,
    pub snapshot_interval: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsBlock {
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            environment: EnvironmentBlock::default(),
            data: DataBlock::default(),
            score: ScoreBlock::default(),
            sft: SftBlock::default(),
            ppo: PpoBlock::default(),
            eval: EvalBlock::default(),
            paths: PathsBlock::default(),
        }
    }
}

impl Default for EnvironmentBlock {
    fn default() -> Self {
        let e = EnvConfig::default();
        Self {
            dim: e.dim,
            categories: e.categories,
            pool_size: e.pool_size,
            prompt_spread: e.prompt_spread,
            exploit_prob: e.exploit_prob,
            category_table: None,
        }
    }
}

impl Default for DataBlock {
    fn default() -> Self {
        let d = DataConfig::default();
        Self {
            rm_train: d.rm_train,
            rm_test: d.rm_test,
            ppo_train: d.ppo_train,
            ppo_test: d.ppo_test,
            forget: d.forget,
            sft_train: d.sft_train,
            source_policies: d.source_policies,
            source_policy_scale: d.source_policy_scale,
        }
    }
}

impl Default for ScoreBlock {
    fn default() -> Self {
        let a = AdvantageConfig::default();
        let s = ScoreTrainSettings::default();
        Self {
            margin: a.margin,
            n: a.n,
            weight_clip: [a.weight_clip.0, a.weight_clip.1],
            expected_regression: a.expected_regression,
            lr: s.lr,
            batch_size: s.batch_size,
            epochs: s.epochs,
            hidden: s.hidden,
        }
    }
}

impl Default for SftBlock {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 1e-3,
            batch_size: 64,
        }
    }
}

impl Default for PpoBlock {
    fn default() -> Self {
        let p = PpoSettings::default();
        let k = KMeansSettings::default();
        Self {
            score_mode: p.score_mode,
            beta: 1.0,
            clip: p.clip,
            steps: p.steps,
            batch_prompts: p.batch_prompts,
            lr: 3e-3,
            update_epochs: p.update_epochs,
            rehearsal: false,
            gamma: p.gamma,
            rehearsal_fraction: p.rehearsal_fraction,
            clusters: 8,
            top_k: 4,
            ma_decay: p.ma_decay,
            kmeans_restarts: k.restarts,
            kmeans_max_iters: k.max_iters,
        }
    }
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            bins: 10,
            tie_epsilon: 0.05,
            snapshot_interval: 10,
        }
    }
}

impl Default for PathsBlock {
    fn default() -> Self {
        Self { out: PathBuf::from("runs") }
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("bad override key `{key}`")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            _ => return Err(invalid(format!("override `{key}`: `{}` is not a block", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!()
}

/// Parses `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{text}` is not key=value")))?;
    let value = serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    pub fn from_value(doc: Value, overrides: &[String]) -> Result<Self> {
        let mut doc = doc;
        if doc.is_null() {
            doc = Value::Object(Default::default());
        }
        if !doc.is_object() {
            return Err(invalid("config must be a JSON object"));
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut doc, &k, v)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            invalid(format!("config key `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// An empty or whitespace-only file means all defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let doc = match path {
            None => Value::Null,
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| LabError::io(p, e))?;
                if text.trim().is_empty() {
                    Value::Null
                } else {
                    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
                }
            }
        };
        Self::from_value(doc, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.source_policies == 0 {
            return Err(invalid("data.source_policies must be at least 1"));
        }
        self.advantage().validate()?;
        self.ppo_settings().validate()?;
        if self.score.epochs == 0 || self.score.batch_size == 0 {
            return Err(invalid("score.epochs and score.batch_size must be positive"));
        }
        if self.sft.batch_size == 0 || !(self.sft.lr >= 0.0) {
            return Err(invalid("sft.batch_size must be positive and sft.lr >= 0"));
        }
        if self.ppo.clusters == 0 || self.ppo.top_k == 0 {
            return Err(invalid("ppo.clusters and ppo.top_k must be at least 1"));
        }
        if self.eval.bins == 0 || self.eval.snapshot_interval == 0 {
            return Err(invalid("eval.bins and eval.snapshot_interval must be positive"));
        }
        if !(self.eval.tie_epsilon >= 0.0) {
            return Err(invalid("eval.tie_epsilon must be >= 0"));
        }
        Ok(())
    }

    /// SHA-256 of everything that can change results (the paths block is left out).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().unwrap().remove("paths");
        hex::encode(Sha256::digest(serde_json::to_vec(&v).unwrap()))
    }

    pub fn run_id(&self) -> String {
        format!("run-{}", &self.hash()[..12])
    }

    pub fn env_config(&self) -> EnvConfig {
        let e = &self.environment;
        EnvConfig {
            dim: e.dim,
            categories: e.categories,
            pool_size: e.pool_size,
            prompt_spread: e.prompt_spread,
            exploit_prob: e.exploit_prob,
            seed: self.seed,
            category_table: e.category_table.clone(),
        }
    }

    pub fn data_config(&self) -> DataConfig {
        let d = &self.data;
        DataConfig {
            rm_train: d.rm_train,
            rm_test: d.rm_test,
            ppo_train: d.ppo_train,
            ppo_test: d.ppo_test,
            forget: d.forget,
            sft_train: d.sft_train,
            source_policies: d.source_policies,
            source_policy_scale: d.source_policy_scale,
        }
    }

    pub fn advantage(&self) -> AdvantageConfig {
        AdvantageConfig {
            margin: self.score.margin,
            n: self.score.n,
            k: self.data.source_policies.saturating_sub(1),
            weight_clip: (self.score.weight_clip[0], self.score.weight_clip[1]),
            expected_regression: self.score.expected_regression,
        }
    }

    pub fn score_settings(&self) -> ScoreTrainSettings {
        ScoreTrainSettings {
            lr: self.score.lr,
            batch_size: self.score.batch_size,
            epochs: self.score.epochs,
            hidden: self.score.hidden.clone(),
        }
    }

    pub fn ppo_settings(&self) -> PpoSettings {
        let p = &self.ppo;
        PpoSettings {
            beta: p.beta,
            clip: p.clip,
            steps: p.steps,
            batch_prompts: p.batch_prompts,
            lr: p.lr,
            update_epochs: p.update_epochs,
            score_mode: p.score_mode,
            gamma: p.gamma,
            rehearsal_fraction: p.rehearsal_fraction,
            ma_decay: p.ma_decay,
        }
    }

    pub fn kmeans(&self) -> KMeansSettings {
        KMeansSettings {
            max_iters: self.ppo.kmeans_max_iters,
            restarts: self.ppo.kmeans_restarts,
        }
    }
}
