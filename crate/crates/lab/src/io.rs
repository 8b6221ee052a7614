//! JSONL datasets, JSON checkpoints and environment documents.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rlstab_core::env::{ComparisonRecord, EnvParams, Episode, ExpertPair, Prompt, Response};
use rlstab_core::policy::SoftmaxPolicy;
use rlstab_core::rehearsal::{Payload, RehearsalRecord, Selected};
use rlstab_core::scoremodel::{AdvantageConfig, ModelKind, ScoreCheckpoint, ScoreLayout, ScoreNet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, LabError, Result};

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| LabError::io(path, e))
}

/// Reads a prerequisite, reporting a missing file as such.
pub fn read_required(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(LabError::Missing(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_required(path)?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| invalid(e.to_string()))?);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// One item per non-blank line; parse errors carry the 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| LabError::Line {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_required(path)?;
    parse_jsonl(path, &text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseLine {
    pub id: u64,
    pub content: Vec<f64>,
    pub exploit: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    /// Log-probability under the current policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_logprob: Option<f64>,
}

impl ResponseLine {
    fn plain(r: &Response) -> Self {
        Self {
            id: r.id,
            content: r.content.clone(),
            exploit: r.exploit as u8,
            logprob: None,
            current_logprob: None,
        }
    }

    fn response(&self) -> Result<Response> {
        if self.exploit > 1 {
            return Err(invalid(format!("response {}: exploit must be 0 or 1", self.id)));
        }
        Ok(Response {
            id: self.id,
            content: self.content.clone(),
            exploit: self.exploit == 1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonLine {
    pub id: u64,
    pub category: usize,
    pub prompt: Vec<f64>,
    pub chosen: ResponseLine,
    pub rejected: ResponseLine,
    pub source_policy: usize,
}

impl From<&ComparisonRecord> for ComparisonLine {
    fn from(r: &ComparisonRecord) -> Self {
        let line = |resp: &Response, lp: f64, cur: f64| ResponseLine {
            logprob: Some(lp),
            current_logprob: Some(cur),
            ..ResponseLine::plain(resp)
        };
        Self {
            id: r.prompt.id,
            category: r.prompt.category,
            prompt: r.prompt.features.clone(),
            chosen: line(&r.chosen, r.chosen_logprob, r.chosen_current_logprob),
            rejected: line(&r.rejected, r.rejected_logprob, r.rejected_current_logprob),
            source_policy: r.source_policy,
        }
    }
}

impl ComparisonLine {
    pub fn record(&self) -> Result<ComparisonRecord> {
        let need = |r: &ResponseLine| -> Result<(f64, f64)> {
            match (r.logprob, r.current_logprob) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(invalid(format!("comparison {}: response {} lacks logprob/current_logprob", self.id, r.id))),
            }
        };
        let (cl, cc) = need(&self.chosen)?;
        let (rl, rc) = need(&self.rejected)?;
        Ok(ComparisonRecord {
            id: self.id,
            prompt: Prompt {
                id: self.id,
                category: self.category,
                features: self.prompt.clone(),
            },
            chosen: self.chosen.response()?,
            rejected: self.rejected.response()?,
            source_policy: self.source_policy,
            chosen_logprob: cl,
            rejected_logprob: rl,
            chosen_current_logprob: cc,
            rejected_current_logprob: rc,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeLine {
    pub id: u64,
    pub category: usize,
    pub prompt: Vec<f64>,
    pub candidates: Vec<ResponseLine>,
    pub utilities: Vec<f64>,
}

impl From<&Episode> for EpisodeLine {
    fn from(e: &Episode) -> Self {
        Self {
            id: e.id,
            category: e.prompt.category,
            prompt: e.prompt.features.clone(),
            candidates: e.candidates.iter().map(ResponseLine::plain).collect(),
            utilities: e.true_utilities.clone(),
        }
    }
}

impl EpisodeLine {
    pub fn episode(&self) -> Result<Episode> {
        if self.candidates.len() != self.utilities.len() || self.candidates.is_empty() {
            return Err(invalid(format!("episode {}: candidates and utilities must be equal and non-empty", self.id)));
        }
        Ok(Episode {
            id: self.id,
            prompt: Prompt {
                id: self.id,
                category: self.category,
                features: self.prompt.clone(),
            },
            candidates: self.candidates.iter().map(ResponseLine::response).collect::<Result<_>>()?,
            true_utilities: self.utilities.clone(),
        })
    }
}

/// Forget / SFT line: the expert response plus the pool it was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertLine {
    pub id: u64,
    pub category: usize,
    pub prompt: Vec<f64>,
    pub expert: ResponseLine,
    pub expert_index: usize,
    pub candidates: Vec<ResponseLine>,
    pub utilities: Vec<f64>,
}

impl From<&ExpertPair> for ExpertLine {
    fn from(p: &ExpertPair) -> Self {
        let e = EpisodeLine::from(&p.episode);
        Self {
            id: p.id,
            category: e.category,
            prompt: e.prompt,
            expert: ResponseLine::plain(p.expert()),
            expert_index: p.expert_index,
            candidates: e.candidates,
            utilities: e.utilities,
        }
    }
}

impl ExpertLine {
    pub fn pair(&self) -> Result<ExpertPair> {
        let episode = EpisodeLine {
            id: self.id,
            category: self.category,
            prompt: self.prompt.clone(),
            candidates: self.candidates.clone(),
            utilities: self.utilities.clone(),
        }
        .episode()?;
        if self.candidates.get(self.expert_index) != Some(&self.expert) {
            return Err(invalid(format!("forget pair {}: expert is not candidate {}", self.id, self.expert_index)));
        }
        Ok(ExpertPair {
            id: self.id,
            episode,
            expert_index: self.expert_index,
        })
    }
}

pub fn write_comparisons(path: &Path, recs: &[ComparisonRecord]) -> Result<()> {
    write_jsonl(path, &recs.iter().map(ComparisonLine::from).collect::<Vec<_>>())
}

pub fn read_comparisons(path: &Path) -> Result<Vec<ComparisonRecord>> {
    read_jsonl::<ComparisonLine>(path)?.iter().map(ComparisonLine::record).collect()
}

pub fn write_episodes(path: &Path, eps: &[Episode]) -> Result<()> {
    write_jsonl(path, &eps.iter().map(EpisodeLine::from).collect::<Vec<_>>())
}

pub fn read_episodes(path: &Path) -> Result<Vec<Episode>> {
    read_jsonl::<EpisodeLine>(path)?.iter().map(EpisodeLine::episode).collect()
}

pub fn write_experts(path: &Path, pairs: &[ExpertPair]) -> Result<()> {
    write_jsonl(path, &pairs.iter().map(ExpertLine::from).collect::<Vec<_>>())
}

pub fn read_experts(path: &Path) -> Result<Vec<ExpertPair>> {
    read_jsonl::<ExpertLine>(path)?.iter().map(ExpertLine::pair).collect()
}

pub fn read_env(path: &Path) -> Result<EnvParams> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayout {
    pub d: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub mode: ModelKind,
    pub layout: CheckpointLayout,
    pub params: Vec<f64>,
    pub advantage_config: AdvantageConfig,
    pub seed: u64,
    pub steps: usize,
}

impl From<&ScoreCheckpoint> for CheckpointFile {
    fn from(c: &ScoreCheckpoint) -> Self {
        Self {
            mode: c.mode,
            layout: CheckpointLayout {
                d: c.net.layout.dim,
                hidden: c.net.layout.hidden.clone(),
                heads: vec!["reward".into(), "expected".into()],
            },
            params: c.net.params.clone(),
            advantage_config: c.advantage.clone(),
            seed: c.seed,
            steps: c.steps,
        }
    }
}

impl CheckpointFile {
    pub fn checkpoint(&self) -> Result<ScoreCheckpoint> {
        let layout = ScoreLayout {
            dim: self.layout.d,
            hidden: self.layout.hidden.clone(),
        };
        if layout.param_count() != self.params.len() {
            return Err(invalid(format!(
                "checkpoint has {} params, layout needs {}",
                self.params.len(),
                layout.param_count()
            )));
        }
        let mut net = ScoreNet::zeros(layout);
        net.params.copy_from_slice(&self.params);
        Ok(ScoreCheckpoint {
            mode: self.mode,
            net,
            advantage: self.advantage_config.clone(),
            seed: self.seed,
            steps: self.steps,
        })
    }
}

pub fn write_checkpoint(path: &Path, c: &ScoreCheckpoint) -> Result<()> {
    write_json(path, &CheckpointFile::from(c))
}

pub fn read_checkpoint(path: &Path) -> Result<ScoreCheckpoint> {
    read_json::<CheckpointFile>(path)?.checkpoint()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyLayout {
    pub d: usize,
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub layout: PolicyLayout,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub temperature: f64,
    pub seed: u64,
    pub steps: usize,
    /// Checkpoint this policy started from.
    pub lineage: Option<String>,
}

impl PolicyFile {
    pub fn new(p: &SoftmaxPolicy, seed: u64, steps: usize, lineage: Option<String>) -> Self {
        Self {
            layout: PolicyLayout {
                d: p.dim,
                features: p.weights.len(),
            },
            w: p.weights.clone(),
            temperature: p.temperature,
            seed,
            steps,
            lineage,
        }
    }

    pub fn policy(&self) -> Result<SoftmaxPolicy> {
        let mut p = SoftmaxPolicy::zeros(self.layout.d);
        if p.weights.len() != self.w.len() || self.layout.features != self.w.len() {
            return Err(invalid(format!("policy has {} weights, layout needs {}", self.w.len(), p.weights.len())));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid("policy temperature must be > 0"));
        }
        p.weights.copy_from_slice(&self.w);
        p.temperature = self.temperature;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalRecordLine {
    pub id: u64,
    pub embedding: Vec<f64>,
    pub score: f64,
    #[serde(default)]
    pub payload: Option<Value>,
}

/// Externally embedded candidates for selection. Every embedding must match
/// the first line's length and ids must be unique.
pub fn ingest_external_records(path: &Path) -> Result<Vec<RehearsalRecord>> {
    let text = read_required(path)?;
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LabError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: ExternalRecordLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let d = *dim.get_or_insert(rec.embedding.len());
        if rec.embedding.is_empty() || rec.embedding.len() != d {
            return Err(err(format!("embedding has dimension {}, expected {d}", rec.embedding.len())));
        }
        if rec.embedding.iter().any(|v| !v.is_finite()) || !rec.score.is_finite() {
            return Err(err("non-finite embedding or score".into()));
        }
        if !ids.insert(rec.id) {
            return Err(err(format!("duplicate id {}", rec.id)));
        }
        out.push(RehearsalRecord {
            id: rec.id,
            embedding: rec.embedding,
            am_score: rec.score,
            payload: match rec.payload {
                Some(v) => Payload::External(v.to_string()),
                None => Payload::None,
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RehearsalLine {
    pub id: u64,
    pub cluster: usize,
    pub am_score: f64,
    pub payload: Value,
}

impl From<&Selected> for RehearsalLine {
    fn from(s: &Selected) -> Self {
        let payload = match &s.record.payload {
            Payload::Episode {
                episode_id,
                response_index,
            } => serde_json::json!({ "episode_id": episode_id, "response_index": response_index }),
            Payload::External(text) => serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.clone())),
            Payload::None => Value::Null,
        };
        Self {
            id: s.record.id,
            cluster: s.cluster,
            am_score: s.record.am_score,
            payload,
        }
    }
}

impl RehearsalLine {
    /// Embeddings are not stored in the output, so records come back without one.
    pub fn selected(&self) -> Selected {
        let episode = (|| {
            Some(Payload::Episode {
                episode_id: self.payload.get("episode_id")?.as_u64()?,
                response_index: self.payload.get("response_index")?.as_u64()? as usize,
            })
        })();
        let payload = match (&self.payload, episode) {
            (_, Some(p)) => p,
            (Value::Null, None) => Payload::None,
            (v, None) => Payload::External(v.to_string()),
        };
        Selected {
            cluster: self.cluster,
            record: RehearsalRecord {
                id: self.id,
                embedding: Vec::new(),
                am_score: self.am_score,
                payload,
            },
        }
    }
}

pub fn write_rehearsal(path: &Path, set: &[Selected]) -> Result<()> {
    write_jsonl(path, &set.iter().map(RehearsalLine::from).collect::<Vec<_>>())
}

pub fn read_rehearsal(path: &Path) -> Result<Vec<Selected>> {
    Ok(read_jsonl::<RehearsalLine>(path)?.iter().map(RehearsalLine::selected).collect())
}
