//! Sequence packing with first-fit-decreasing and per-token loss weights.
//!
//! Records are greedily packed into bins of `max_len` tokens. Loss applies
//! only to answer tokens: each answer token of record i carries weight
//! 1/(K * N_i), where K is the number of records across the whole pack set
//! and N_i the record's answer-token count. Every record then contributes
//! the same total weight 1/K and the grand sum over the set is exactly 1,
//! so a packed batch reproduces per-sample mean loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Counts tokens in a way that is stable for the whole run.
///
/// Contract: `count("") == 0`, and counts are monotone under concatenation
/// (count(a+b) >= max(count(a), count(b))).
pub trait TokenCounter: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Whitespace word count; the default proxy when no tokenizer is wired in.
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn name(&self) -> &str {
        "whitespace"
    }
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// ceil(chars / 4); a coarse subword approximation.
pub struct CharQuarterCounter;

impl TokenCounter for CharQuarterCounter {
    fn name(&self) -> &str {
        "chars4"
    }
    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

/// Looks up a built-in counter by its config name.
pub fn counter_by_name(name: &str) -> Option<Box<dyn TokenCounter>> {
    match name {
        "whitespace" => Some(Box::new(WhitespaceCounter)),
        "chars4" => Some(Box::new(CharQuarterCounter)),
        _ => None,
    }
}

/// Convenience wrapper so call sites read as an operation.
pub fn count_tokens(text: &str, counter: &dyn TokenCounter) -> usize {
    counter.count(text)
}

/// One record to pack: token counts are already resolved, either via a
/// counter or from count annotations shipped with the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackItem {
    pub id: String,
    pub prompt_tokens: usize,
    pub answer_tokens: usize,
}

impl PackItem {
    pub fn total(&self) -> usize {
        self.prompt_tokens + self.answer_tokens
    }
}

/// A record's slot inside a packed sequence. `loss_weight` is the weight of
/// each answer token (prompt tokens weigh 0); it is 0 until
/// [`loss_weights`] runs over the pack set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSegment {
    pub record_id: String,
    pub prompt_tokens: usize,
    pub answer_tokens: usize,
    pub loss_weight: f64,
}

/// One packed sequence; segment tokens sum to `total_tokens <= max_len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub segments: Vec<PackedSegment>,
    pub total_tokens: usize,
    pub max_len: usize,
}

/// Result of packing: sequences plus the oversize records that were diverted
/// instead of truncated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackOutcome {
    pub packs: Vec<PackedSequence>,
    pub oversize: Vec<PackItem>,
}

#[derive(Debug, Error)]
pub enum PackError {
    #[error("max_len must be positive")]
    ZeroMaxLen,
    #[error("all {0} records exceed max_len; nothing can be packed")]
    AllOversize(usize),
    #[error("record `{0}` has zero answer tokens; loss weights would be undefined")]
    ZeroAnswerTokens(String),
}

/// First-fit-decreasing packing. Records are sorted by total token count
/// descending (ties broken by id) and each is placed into the first sequence
/// with room, opening a new one when none fits. Records longer than
/// `max_len` are never truncated; they are diverted into the oversize list.
pub fn pack(items: &[PackItem], max_len: usize) -> Result<PackOutcome, PackError> {
    if max_len == 0 {
        return Err(PackError::ZeroMaxLen);
    }
    let mut oversize = Vec::new();
    let mut fitting: Vec<&PackItem> = Vec::new();
    for item in items {
        if item.total() > max_len {
            oversize.push(item.clone());
        } else {
            fitting.push(item);
        }
    }
    if fitting.is_empty() && !items.is_empty() {
        return Err(PackError::AllOversize(items.len()));
    }
    fitting.sort_by(|a, b| b.total().cmp(&a.total()).then_with(|| a.id.cmp(&b.id)));

    let mut packs: Vec<PackedSequence> = Vec::new();
    for item in fitting {
        let slot = packs
            .iter_mut()
            .find(|p| p.total_tokens + item.total() <= max_len);
        let pack = match slot {
            Some(p) => p,
            None => {
                packs.push(PackedSequence {
                    segments: Vec::new(),
                    total_tokens: 0,
                    max_len,
                });
                packs.last_mut().unwrap()
            }
        };
        pack.segments.push(PackedSegment {
            record_id: item.id.clone(),
            prompt_tokens: item.prompt_tokens,
            answer_tokens: item.answer_tokens,
            loss_weight: 0.0,
        });
        pack.total_tokens += item.total();
    }
    Ok(PackOutcome { packs, oversize })
}

/// Fills per-answer-token loss weights across the whole pack set:
/// weight = 1 / (K * N_i) with K = total records in `packs`.
pub fn loss_weights(mut packs: Vec<PackedSequence>) -> Result<Vec<PackedSequence>, PackError> {
    let k: usize = packs.iter().map(|p| p.segments.len()).sum();
    if k == 0 {
        return Ok(packs);
    }
    for pack in &mut packs {
        for seg in &mut pack.segments {
            if seg.answer_tokens == 0 {
                return Err(PackError::ZeroAnswerTokens(seg.record_id.clone()));
            }
            seg.loss_weight = 1.0 / (k as f64 * seg.answer_tokens as f64);
        }
    }
    Ok(packs)
}
