//! Representative-example discovery: cluster PPO prompts, keep the
//! highest-advantage responses of each cluster, shuffle them into a
//! rehearsal set.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::env::Episode;
use crate::numkernel::RandomStream;
use crate::policy::{SoftmaxPolicy, Target};
use crate::scoremodel::{ModelKind, ScoreCheckpoint};
use crate::{Error, Result};

/// Where a rehearsal example comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Episode { episode_id: u64, response_index: usize },
    /// Opaque JSON text carried through from an external record.
    External(String),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RehearsalRecord {
    pub id: u64,
    pub embedding: Vec<f64>,
    pub am_score: f64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Cluster of each input point, in input order.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids.
    pub objective: f64,
    pub iterations_used: usize,
    /// Objective after the initial assignment and after every Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansSettings {
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for KMeansSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            restarts: 10,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let assignments = points
        .iter()
        .map(|p| {
            let (j, d) = nearest(p, centroids);
            total += d;
            j
        })
        .collect();
    (assignments, total)
}

fn seed_plus_plus(points: &[Vec<f64>], c: usize, rng: &mut RandomStream) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.below(points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            rng.categorical(&d2)
        } else {
            rng.below(points.len())
        };
        centroids.push(points[next].clone());
        let last = centroids.last().unwrap();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, last));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> Clustering {
    let dim = points[0].len();
    let (mut assignments, mut objective) = assign_all(points, &centroids);
    let mut trace = vec![objective];
    let mut iterations_used = 0;
    for it in 1..=max_iters {
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (j, (s, n)) in sums.into_iter().zip(&counts).enumerate() {
            if *n > 0 {
                centroids[j] = s.into_iter().map(|v| v / *n as f64).collect();
            }
        }
        let (next, obj) = assign_all(points, &centroids);
        trace.push(obj);
        objective = obj;
        iterations_used = it;
        let unchanged = next == assignments;
        assignments = next;
        if unchanged {
            break;
        }
    }
    Clustering {
        assignments,
        centroids,
        objective,
        iterations_used,
        objective_trace: trace,
    }
}

/// k-means++ seeded Lloyd iterations; the best objective over `restarts`
/// independent seedings wins (earliest restart on ties).
pub fn kmeans_points(points: &[Vec<f64>], c: usize, rng: &RandomStream, settings: KMeansSettings) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::Empty("clustering input"));
    }
    if c == 0 || c > points.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "cluster count must lie in 1..={}, got {c}",
            points.len()
        )));
    }
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "embedding",
                expected: dim,
                actual: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding"));
        }
    }
    let mut best: Option<Clustering> = None;
    for r in 0..settings.restarts.max(1) {
        let mut stream = rng.split(r as u64);
        let init = seed_plus_plus(points, c, &mut stream);
        let run = lloyd(points, init, settings.max_iters);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    Ok(best.unwrap())
}

pub fn kmeans_cluster(records: &[RehearsalRecord], c: usize, rng: &RandomStream, settings: KMeansSettings) -> Result<Clustering> {
    let points: Vec<Vec<f64>> = records.iter().map(|r| r.embedding.clone()).collect();
    kmeans_points(&points, c, rng, settings)
}

/// A record chosen for rehearsal and the cluster it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selected {
    pub cluster: usize,
    pub record: RehearsalRecord,
}

/// Per cluster, the `min(k, size)` highest-scoring records (lower id first
/// on equal scores), concatenated in cluster order.
pub fn select_top_k(records: &[RehearsalRecord], clustering: &Clustering, k: usize) -> Result<Vec<Selected>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if clustering.assignments.len() != records.len() {
        return Err(Error::LengthMismatch {
            expected: records.len(),
            actual: clustering.assignments.len(),
        });
    }
    let mut by_cluster: BTreeMap<usize, Vec<&RehearsalRecord>> = BTreeMap::new();
    for (rec, &c) in records.iter().zip(&clustering.assignments) {
        by_cluster.entry(c).or_default().push(rec);
    }
    let mut out = Vec::new();
    for (cluster, mut members) in by_cluster {
        members.sort_by(|a, b| b.am_score.total_cmp(&a.am_score).then(a.id.cmp(&b.id)));
        out.extend(members.into_iter().take(k).map(|r| Selected {
            cluster,
            record: r.clone(),
        }));
    }
    Ok(out)
}

pub fn validate_records(records: &[RehearsalRecord]) -> Result<()> {
    let mut ids = BTreeSet::new();
    let dim = records.first().map_or(0, |r| r.embedding.len());
    for r in records {
        if r.embedding.is_empty() || r.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                what: "embedding",
                expected: dim,
                actual: r.embedding.len(),
            });
        }
        if r.embedding.iter().any(|v| !v.is_finite()) || !r.am_score.is_finite() {
            return Err(Error::NonFinite("rehearsal record"));
        }
        if !ids.insert(r.id) {
            return Err(Error::InvalidConfig(alloc::format!("duplicate record id {}", r.id)));
        }
    }
    Ok(())
}

/// Clusters, selects and shuffles already scored records.
pub fn select_rehearsal(records: &[RehearsalRecord], c: usize, k: usize, settings: KMeansSettings, rng: &RandomStream) -> Result<Vec<Selected>> {
    if records.is_empty() {
        return Err(Error::Empty("rehearsal candidates"));
    }
    validate_records(records)?;
    let clustering = kmeans_cluster(records, c, &rng.split_named("kmeans"), settings)?;
    let mut selected = select_top_k(records, &clustering, k)?;
    rng.split_named("shuffle").shuffle(&mut selected);
    Ok(selected)
}

/// Samples one response per episode from `policy`, scores it with the
/// advantage model, then clusters prompt embeddings and keeps the top `k`
/// per cluster. The prompt feature vector serves as the embedding.
pub fn build_rehearsal_set(
    episodes: &[Episode],
    policy: &SoftmaxPolicy,
    scorer: &ScoreCheckpoint,
    c: usize,
    k: usize,
    settings: KMeansSettings,
    rng: &RandomStream,
) -> Result<Vec<Selected>> {
    if scorer.mode != ModelKind::Am {
        return Err(Error::ModeMismatch {
            expected: "am",
            actual: scorer.mode.name(),
        });
    }
    let respond = rng.split_named("respond");
    let mut records = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        let action = respond.split(i as u64).categorical(&policy.action_probs(ep));
        records.push(RehearsalRecord {
            id: ep.id,
            embedding: ep.prompt.features.clone(),
            am_score: scorer.advantage(&ep.prompt, &ep.candidates[action])?,
            payload: Payload::Episode {
                episode_id: ep.id,
                response_index: action,
            },
        });
    }
    select_rehearsal(&records, c, k, settings, rng)
}

/// Resolves episode payloads into teacher-forcing targets.
pub fn rehearsal_targets<'a>(selected: &[Selected], episodes: &'a [Episode]) -> Result<Vec<Target<'a>>> {
    let by_id: BTreeMap<u64, &Episode> = episodes.iter().map(|e| (e.id, e)).collect();
    selected
        .iter()
        .map(|s| match s.record.payload {
            Payload::Episode {
                episode_id,
                response_index,
            } => {
                let episode = by_id.get(&episode_id).ok_or(Error::IndexOutOfRange {
                    what: "episode ids",
                    index: episode_id as usize,
                    len: episodes.len(),
                })?;
                Ok(Target {
                    episode,
                    index: response_index,
                })
            }
            _ => Err(Error::InvalidConfig(alloc::format!(
                "record {} has no episode payload",
                s.record.id
            ))),
        })
        .collect()
}
