//! Composition of synthesized contexts into long training samples.
//!
//! Each sample concatenates one relevant context with n-1 distractor
//! contexts drawn from other pairs. Distractors are a prefix of a full
//! seeded permutation of the eligible pool (sorted by pair id first), so a
//! fixed seed yields nested distractor sets as n grows and the sample is a
//! pure function of (record, pool, n, seed). The relevant block lands at a
//! uniformly random index.

use crate::corpus::InstructionPair;
use crate::packing::TokenCounter;
use crate::synthesis::ContextRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ComposeError {
    #[error("n must be at least 1")]
    ZeroContexts,
    #[error("need {required} distractor contexts from other pairs but the pool offers {available}")]
    InsufficientPool { required: usize, available: usize },
    #[error("context record belongs to pair `{context}` but the pair is `{pair}`")]
    PairMismatch { context: String, pair: String },
    #[error("sample for pair `{0}` is already context-free")]
    AlreadyContextFree(String),
    #[error("no records to summarize")]
    NoRecords,
}

/// One composed training sample with full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedSample {
    pub pair_id: String,
    pub context_text: String,
    pub instruction: String,
    pub answer: String,
    pub n_contexts: usize,
    /// Position of the relevant context among the concatenated blocks.
    pub relevant_index: usize,
    /// Pair ids of every block in order; contains `pair_id` exactly once.
    pub component_ids: Vec<String>,
    pub context_free: bool,
    /// Seed that reproduces this sample's distractor draw and shuffle.
    pub seed: u64,
}

/// Concatenates `context` with n-1 distractors from `pool`.
///
/// Pool entries sharing the pair's id are excluded; remaining entries are
/// deduplicated by pair id. Blocks are joined by a blank line.
pub fn concatenate(
    pair: &InstructionPair,
    context: &ContextRecord,
    pool: &[ContextRecord],
    n: usize,
    seed: u64,
) -> Result<ComposedSample, ComposeError> {
    if n == 0 {
        return Err(ComposeError::ZeroContexts);
    }
    if context.pair_id != pair.id {
        return Err(ComposeError::PairMismatch {
            context: context.pair_id.clone(),
            pair: pair.id.clone(),
        });
    }
    // Dedup by pair id, keeping the first record for each; sort so the draw
    // is independent of pool order.
    let mut eligible: BTreeMap<&str, &ContextRecord> = BTreeMap::new();
    for rec in pool {
        if rec.pair_id != pair.id {
            eligible.entry(rec.pair_id.as_str()).or_insert(rec);
        }
    }
    if eligible.len() < n - 1 {
        return Err(ComposeError::InsufficientPool {
            required: n - 1,
            available: eligible.len(),
        });
    }
    let mut ordered: Vec<&ContextRecord> = eligible.into_values().collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Full permutation, then a prefix: growing n only appends distractors.
    ordered.shuffle(&mut rng);
    let distractors = &ordered[..n - 1];
    let relevant_index = rng.gen_range(0..n);

    let mut component_ids = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(n);
    for rec in distractors {
        component_ids.push(rec.pair_id.clone());
        blocks.push(rec.text.as_str());
    }
    component_ids.insert(relevant_index, context.pair_id.clone());
    blocks.insert(relevant_index, context.text.as_str());

    Ok(ComposedSample {
        pair_id: pair.id.clone(),
        context_text: blocks.join("\n\n"),
        instruction: pair.instruction.clone(),
        answer: pair.answer.clone(),
        n_contexts: n,
        relevant_index,
        component_ids,
        context_free: false,
        seed,
    })
}

/// Ablation twin of a composed sample: same pair, no context at all.
pub fn make_context_free(sample: &ComposedSample) -> Result<ComposedSample, ComposeError> {
    if sample.context_free {
        return Err(ComposeError::AlreadyContextFree(sample.pair_id.clone()));
    }
    Ok(ComposedSample {
        pair_id: sample.pair_id.clone(),
        context_text: String::new(),
        instruction: sample.instruction.clone(),
        answer: sample.answer.clone(),
        n_contexts: 0,
        relevant_index: 0,
        component_ids: Vec::new(),
        context_free: true,
        seed: sample.seed,
    })
}

/// How a sample's context and instruction are laid out in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptLayout {
    /// Text prepended before the context block.
    pub context_prefix: String,
    /// Separator between context block and instruction.
    pub separator: String,
}

impl Default for PromptLayout {
    fn default() -> Self {
        PromptLayout {
            context_prefix: String::new(),
            separator: "\n\n".into(),
        }
    }
}

/// A prompt/answer pair ready for token counting and packing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub prompt: String,
    pub answer: String,
}

/// Renders the final prompt. Context-free samples are the instruction alone.
pub fn assemble_prompt(sample: &ComposedSample, layout: &PromptLayout) -> TrainingRecord {
    let prompt = if sample.context_free || sample.context_text.is_empty() {
        sample.instruction.clone()
    } else {
        format!(
            "{}{}{}{}",
            layout.context_prefix, sample.context_text, layout.separator, sample.instruction
        )
    };
    TrainingRecord {
        id: sample.pair_id.clone(),
        prompt,
        answer: sample.answer.clone(),
    }
}

/// Summary of per-record token counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthDistribution {
    pub counts: Vec<usize>,
    pub min: usize,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: usize,
    pub mean: f64,
}

/// Quantile with linear interpolation between closest ranks.
fn quantile(sorted: &[usize], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0] as f64;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64)
}

/// Exact length statistics over raw token counts.
pub fn length_stats(counts: Vec<usize>) -> Result<LengthDistribution, ComposeError> {
    if counts.is_empty() {
        return Err(ComposeError::NoRecords);
    }
    let mut sorted = counts.clone();
    sorted.sort_unstable();
    let mean = sorted.iter().sum::<usize>() as f64 / sorted.len() as f64;
    Ok(LengthDistribution {
        min: sorted[0],
        p25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        p75: quantile(&sorted, 0.75),
        max: *sorted.last().unwrap(),
        mean,
        counts,
    })
}

/// Measures texts under a counter and summarizes them.
pub fn length_stats_texts<'a, I>(texts: I, counter: &dyn TokenCounter) -> Result<LengthDistribution, ComposeError>
where
    I: IntoIterator<Item = &'a str>,
{
    length_stats(texts.into_iter().map(|t| counter.count(t)).collect())
}
