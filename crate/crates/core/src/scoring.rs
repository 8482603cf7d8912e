//! Reference scorers and the context-ablation gap report.
//!
//! `score_em` gives partial credit as the fraction of gold values found
//! verbatim in the prediction. `score_f1` is SQuAD-style token F1
//! (lowercase, punctuation stripped, articles dropped, bag-of-token
//! overlap). `score_rouge_l` is word-level Rouge-L F-measure after
//! lowercasing only. Aggregation keeps unrounded means internally and
//! rounds to two decimals for display.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("no scores to aggregate")]
    Empty,
    #[error("task sets differ between runs: only context-free has {free_only:?}, only context-included has {included_only:?}")]
    TaskMismatch {
        free_only: Vec<String>,
        included_only: Vec<String>,
    },
    #[error("duplicate task `{0}` in score reports")]
    DuplicateTask(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Em,
    F1,
    RougeL,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Em => "em",
            Metric::F1 => "f1",
            Metric::RougeL => "rouge_l",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "em" => Ok(Metric::Em),
            "f1" => Ok(Metric::F1),
            "rouge_l" | "rouge-l" => Ok(Metric::RougeL),
            other => Err(format!("unknown metric `{other}` (expected em, f1, or rouge_l)")),
        }
    }
}

/// Fraction of gold values appearing verbatim in `pred`. Substring match is
/// exact: no case folding, no whitespace repair. Empty gold scores 0.
pub fn score_em(pred: &str, gold_values: &[String]) -> f64 {
    if gold_values.is_empty() {
        return 0.0;
    }
    let hits = gold_values.iter().filter(|v| pred.contains(v.as_str())).count();
    hits as f64 / gold_values.len() as f64
}

/// SQuAD answer normalization: lowercase, strip ASCII punctuation, drop the
/// articles a/an/the, collapse whitespace via tokenization.
fn normalize_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split_whitespace()
        .map(|w| w.chars().filter(|c| !c.is_ascii_punctuation()).collect::<String>())
        .filter(|w| !w.is_empty() && w != "a" && w != "an" && w != "the")
        .collect()
}

fn f_measure(overlap: usize, pred_len: usize, gold_len: usize) -> f64 {
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred_len as f64;
    let r = overlap as f64 / gold_len as f64;
    2.0 * p * r / (p + r)
}

/// Token-level F1 over normalized bags of tokens. When either side
/// normalizes to empty the score is 0, unless both do (then 1).
pub fn score_f1(pred: &str, gold: &str) -> f64 {
    let pred_tokens = normalize_tokens(pred);
    let gold_tokens = normalize_tokens(gold);
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return (pred_tokens.is_empty() && gold_tokens.is_empty()) as u8 as f64;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_tokens {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &pred_tokens {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    f_measure(overlap, pred_tokens.len(), gold_tokens.len())
}

/// Longest common subsequence length over word slices (single DP row).
fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for &wa in a {
        for (j, &wb) in b.iter().enumerate() {
            curr[j + 1] = if wa == wb {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Word-level Rouge-L F-measure after lowercasing. Either side empty
/// (after whitespace split) scores 0.
pub fn score_rouge_l(pred: &str, gold: &str) -> f64 {
    let pred_lower = pred.to_lowercase();
    let gold_lower = gold.to_lowercase();
    let pred_tokens: Vec<&str> = pred_lower.split_whitespace().collect();
    let gold_tokens: Vec<&str> = gold_lower.split_whitespace().collect();
    if pred_tokens.is_empty() || gold_tokens.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&pred_tokens, &gold_tokens);
    f_measure(lcs, pred_tokens.len(), gold_tokens.len())
}

/// One scored sample, joined on `sample_id` with its gold record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub score: f64,
}

/// Per-task aggregate. `mean_x100` is unrounded; use [`ScoreReport::display_mean`]
/// for the two-decimal presentation form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task: String,
    pub metric: Metric,
    pub n: usize,
    pub mean_x100: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_sample: Vec<SampleScore>,
}

impl ScoreReport {
    pub fn display_mean(&self) -> String {
        format!("{:.2}", self.mean_x100)
    }
}

/// Averages per-sample scores into a 0-100 scale report.
pub fn aggregate(scores: Vec<SampleScore>, task: &str, metric: Metric) -> Result<ScoreReport, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::Empty);
    }
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len() as f64;
    Ok(ScoreReport {
        task: task.to_string(),
        metric,
        n: scores.len(),
        mean_x100: mean * 100.0,
        per_sample: scores,
    })
}

/// One row of the ablation gap report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub task: String,
    pub context_free_mean: f64,
    pub context_included_mean: f64,
    /// included - free: how much the context actually helps.
    pub gap: f64,
    /// Gap at or below the threshold: the instruction barely needs its
    /// context, a sign of low-coherence data.
    pub low_coherence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub threshold: f64,
    pub rows: Vec<GapRow>,
}

fn by_task(reports: &[ScoreReport]) -> Result<BTreeMap<&str, &ScoreReport>, ScoreError> {
    let mut map = BTreeMap::new();
    for r in reports {
        if map.insert(r.task.as_str(), r).is_some() {
            return Err(ScoreError::DuplicateTask(r.task.clone()));
        }
    }
    Ok(map)
}

/// Joins context-free and context-included aggregates by task and flags
/// tasks whose gap is at or below `threshold` (points on the x100 scale).
pub fn gap_report(free: &[ScoreReport], included: &[ScoreReport], threshold: f64) -> Result<GapReport, ScoreError> {
    let free_map = by_task(free)?;
    let included_map = by_task(included)?;
    let free_tasks: BTreeSet<&str> = free_map.keys().copied().collect();
    let included_tasks: BTreeSet<&str> = included_map.keys().copied().collect();
    if free_tasks != included_tasks {
        return Err(ScoreError::TaskMismatch {
            free_only: free_tasks.difference(&included_tasks).map(|s| s.to_string()).collect(),
            included_only: included_tasks.difference(&free_tasks).map(|s| s.to_string()).collect(),
        });
    }
    let rows = free_map
        .iter()
        .map(|(task, f)| {
            let i = included_map[task];
            let gap = i.mean_x100 - f.mean_x100;
            GapRow {
                task: task.to_string(),
                context_free_mean: f.mean_x100,
                context_included_mean: i.mean_x100,
                gap,
                low_coherence: gap <= threshold,
            }
        })
        .collect();
    Ok(GapReport { threshold, rows })
}
