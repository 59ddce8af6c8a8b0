//! Benchmark harness: multiple-choice ranking for the semantic and logic
//! tasks and within-pool retrieval for the dynamics task.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{cosine_similarity_matrix, normalized_dtw_cost};
use crate::error::{Error, Result};
use crate::perceiver::similarity_scores;
use crate::synthgen::{Dataset, DynamicsPool, McqItem, Split};
use crate::tensor::{Tape, Tensor};
use crate::trainer::{phrase_spans, Model};

/// Scores caption candidates against one clip.
pub trait Scorer {
    fn score(&self, frames: &Tensor, candidates: &[&str]) -> Result<Vec<f64>>;
}

/// Cosine between pooled action tokens and encoded captions.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub temperature: f64,
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, frames: &Tensor, candidates: &[&str]) -> Result<Vec<f64>> {
        let v = self.model.video_embeddings(std::slice::from_ref(frames))?;
        let t = self.model.text_embeddings(candidates)?;
        cosine_scores(&v, &t, self.temperature)
    }
}

/// Cosine between the plain mean of all frame features and the encoded
/// captions; ignores the perceiver entirely.
pub struct FrameMeanScorer<'a> {
    pub model: &'a Model,
}

impl Scorer for FrameMeanScorer<'_> {
    fn score(&self, frames: &Tensor, candidates: &[&str]) -> Result<Vec<f64>> {
        let c = *frames.shape().last().expect("nonempty shape");
        let rows = frames.len() / c;
        let flat = Tensor::new(&[rows, c], frames.data().to_vec())?;
        let mut mean = vec![0.0; c];
        for r in 0..rows {
            for (m, x) in mean.iter_mut().zip(flat.row(r)) {
                *m += x / rows as f64;
            }
        }
        let v = Tensor::new(&[1, c], mean)?;
        let t = self.model.text_embeddings(candidates)?;
        cosine_scores(&v, &t, 1.0)
    }
}

fn cosine_scores(v: &Tensor, t: &Tensor, temperature: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(v.clone()), tape.constant(t.clone()));
    let s = similarity_scores(&mut tape, a, b, temperature)?;
    Ok(tape.value(s).data().to_vec())
}

/// Candidate indices by descending score; equal scores keep index order.
pub fn rank_candidates(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NumericDomain(format!("candidate {i} scored NaN")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("no NaN").then(a.cmp(&b)));
    Ok(order)
}

/// 1-based rank of `answer` under [`rank_candidates`].
pub fn answer_rank(scores: &[f64], answer: usize) -> Result<usize> {
    let order = rank_candidates(scores)?;
    order
        .iter()
        .position(|&i| i == answer)
        .map(|p| p + 1)
        .ok_or_else(|| Error::Precondition(format!("answer {answer} outside {} candidates", scores.len())))
}

pub fn score_mcq(scorer: &dyn Scorer, frames: &Tensor, item: &McqItem) -> Result<Vec<usize>> {
    let cands: Vec<&str> = item.candidates.iter().map(String::as_str).collect();
    let scores = scorer.score(frames, &cands)?;
    rank_candidates(&scores)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub n: usize,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    /// Headline mean-rank figure: the median rank.
    pub mr_median: f64,
    pub mr_mean: f64,
    pub acc: f64,
}

pub fn mcq_metrics(ranks: &[usize]) -> Result<RankMetrics> {
    if ranks.is_empty() {
        return Err(Error::Precondition("no ranked items".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Precondition("ranks are 1-based".into()));
    }
    let n = ranks.len();
    let pct = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    Ok(RankMetrics {
        n,
        r1: pct(1),
        r5: pct(5),
        r10: pct(10),
        mr_median: median,
        mr_mean: ranks.iter().sum::<usize>() as f64 / n as f64,
        acc: pct(1),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolMetrics {
    pub pool: String,
    pub clips: usize,
    pub v2t: RankMetrics,
    pub t2v: RankMetrics,
}

/// Both directions over a square video-by-caption score matrix whose
/// diagonal holds the true pairs.
pub fn pool_retrieval(pool: &str, scores: &Tensor) -> Result<PoolMetrics> {
    let (n, m) = scores.dims2()?;
    if n != m {
        return Err(Error::Dimension { op: "pool_retrieval", lhs: vec![n, m], rhs: vec![n, n] });
    }
    if n < 2 {
        return Err(Error::Precondition(format!("pool {pool} has {n} clip(s)")));
    }
    let v2t = (0..n).map(|i| answer_rank(scores.row(i), i)).collect::<Result<Vec<_>>>()?;
    let t2v = (0..n)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| scores.at(i, j)).collect();
            answer_rank(&col, j)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PoolMetrics {
        pool: pool.to_string(),
        clips: n,
        v2t: mcq_metrics(&v2t)?,
        t2v: mcq_metrics(&t2v)?,
    })
}

/// Clip-count-weighted mean of every field over pools.
pub fn weighted_aggregate(pools: &[PoolMetrics]) -> Result<(RankMetrics, RankMetrics)> {
    let total: usize = pools.iter().map(|p| p.clips).sum();
    if total == 0 {
        return Err(Error::Precondition("no pools to aggregate".into()));
    }
    let agg = |pick: fn(&PoolMetrics) -> &RankMetrics| {
        let w = |f: fn(&RankMetrics) -> f64| {
            pools.iter().map(|p| f(pick(p)) * p.clips as f64).sum::<f64>() / total as f64
        };
        RankMetrics {
            n: total,
            r1: w(|m| m.r1),
            r5: w(|m| m.r5),
            r10: w(|m| m.r10),
            mr_median: w(|m| m.mr_median),
            mr_mean: w(|m| m.mr_mean),
            acc: w(|m| m.acc),
        }
    };
    Ok((agg(|p| &p.v2t), agg(|p| &p.t2v)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Semantic,
    Logic,
    Dynamics,
}

impl Task {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "semantic" => Some(Self::Semantic),
            "logic" => Some(Self::Logic),
            "dynamics" => Some(Self::Dynamics),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    /// Semantic and logic items, or the weighted video-to-text aggregate.
    pub metrics: RankMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t2v: Option<RankMetrics>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub pools: Vec<PoolMetrics>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub skipped_pools: Vec<String>,
}

impl TaskReport {
    pub fn check_invariants(&self) -> Result<()> {
        let all = std::iter::once(&self.metrics)
            .chain(self.t2v.as_ref())
            .chain(self.pools.iter().flat_map(|p| [&p.v2t, &p.t2v]));
        for m in all {
            let ok = (0.0..=100.0).contains(&m.r1)
                && m.r1 <= m.r5
                && m.r5 <= m.r10
                && m.r10 <= 100.0
                && m.mr_median >= 1.0
                && m.mr_mean >= 1.0;
            if !ok {
                return Err(Error::Inconsistency(format!("metric invariants violated: {m:?}")));
            }
        }
        Ok(())
    }
}

fn clip_frames(data: &Dataset, clip_id: &str) -> Result<Tensor> {
    let i = data
        .clip_index(clip_id)
        .ok_or_else(|| Error::Precondition(format!("unknown clip {clip_id:?}")))?;
    Ok(data.frames(i))
}

pub fn eval_mcq(scorer: &dyn Scorer, data: &Dataset, items: &[McqItem]) -> Result<(Vec<usize>, RankMetrics)> {
    let mut ranks = Vec::with_capacity(items.len());
    for item in items {
        let frames = clip_frames(data, &item.clip_id)?;
        let order = score_mcq(scorer, &frames, item)?;
        ranks.push(order.iter().position(|&i| i == item.answer).expect("answer in range") + 1);
    }
    let m = mcq_metrics(&ranks)?;
    Ok((ranks, m))
}

/// Per-pool retrieval; pools with fewer than two clips are skipped with a
/// warning and listed in the result.
pub fn eval_dynamics(scorer: &dyn Scorer, data: &Dataset, pools: &[DynamicsPool]) -> Result<(Vec<PoolMetrics>, Vec<String>)> {
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for pool in pools {
        if pool.clip_ids.len() < 2 {
            log::warn!("pool {} has {} clip(s); excluded", pool.id, pool.clip_ids.len());
            skipped.push(pool.id.clone());
            continue;
        }
        let caps: Vec<&str> = pool.captions.iter().map(String::as_str).collect();
        let n = caps.len();
        let mut s = Vec::with_capacity(n * n);
        for id in &pool.clip_ids {
            s.extend(scorer.score(&clip_frames(data, id)?, &caps)?);
        }
        out.push(pool_retrieval(&pool.id, &Tensor::new(&[n, n], s)?)?);
    }
    Ok((out, skipped))
}

pub fn evaluate(task: Task, scorer: &dyn Scorer, data: &Dataset) -> Result<TaskReport> {
    let report = match task {
        Task::Semantic | Task::Logic => {
            let items = if task == Task::Semantic { &data.semantic } else { &data.logic };
            let (_, metrics) = eval_mcq(scorer, data, items)?;
            TaskReport { task, metrics, t2v: None, pools: Vec::new(), skipped_pools: Vec::new() }
        }
        Task::Dynamics => {
            let (pools, skipped_pools) = eval_dynamics(scorer, data, &data.dynamics)?;
            let (v2t, t2v) = weighted_aggregate(&pools)?;
            TaskReport { task, metrics: v2t, t2v: Some(t2v), pools, skipped_pools }
        }
    };
    report.check_invariants()?;
    Ok(report)
}

/// Per-frame mean over patches, `T×C`.
pub fn frame_means(frames: &Tensor) -> Result<Tensor> {
    match frames.shape() {
        &[t, n, c] => {
            let mut out = vec![0.0; t * c];
            for (i, x) in frames.data().iter().enumerate() {
                out[(i / (n * c)) * c + i % c] += x / n as f64;
            }
            Tensor::new(&[t, c], out)
        }
        &[_, _] => Ok(frames.clone()),
        s => Err(Error::Precondition(format!("frames must be T×N×C or T×C, got {s:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentCost {
    pub clip: String,
    pub steps: usize,
    pub tokens: f64,
    pub raw: f64,
}

/// Normalized DTW cost of the action tokens and of the raw frame means
/// against the gold phrase embeddings, for eval clips with at least
/// `min_steps` steps.
pub fn alignment_costs(model: &Model, data: &Dataset, min_steps: usize) -> Result<Vec<AlignmentCost>> {
    let mut out = Vec::new();
    for i in data.split_indices(Split::Eval) {
        let clip = &data.clips[i];
        if clip.steps.len() < min_steps {
            continue;
        }
        let spans = phrase_spans(&clip.caption.text, &data.lexicon);
        if spans.len() != clip.steps.len() {
            return Err(Error::Inconsistency(format!("clip {} has {} steps but {} phrases", clip.id, clip.steps.len(), spans.len())));
        }
        let p = model.phrase_embeddings(&clip.caption.text, &spans)?;
        let frames = data.frames(i);
        let tokens = normalized_dtw_cost(&cosine_similarity_matrix(&model.action_tokens(&frames)?, &p)?)?;
        let raw = normalized_dtw_cost(&cosine_similarity_matrix(&frame_means(&frames)?, &p)?)?;
        out.push(AlignmentCost { clip: clip.id.clone(), steps: clip.steps.len(), tokens, raw });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub created: String,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub data: String,
    pub report: TaskReport,
}

/// Appends to the JSON array at `path`, creating it when absent.
pub fn append_report(path: &Path, entry: &ReportEntry) -> Result<()> {
    entry.report.check_invariants()?;
    let mut all: Vec<ReportEntry> = if path.exists() {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
    } else {
        Vec::new()
    };
    all.push(entry.clone());
    fs::write(path, serde_json::to_string_pretty(&all)? + "\n")?;
    Ok(())
}
