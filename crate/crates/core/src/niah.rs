//! Needle-in-a-haystack sample generation.
//!
//! A sample hides "magic number" sentences (needles) inside filler text cut
//! to a token budget, then asks for the hidden values. Four variants cover
//! single retrieval, key distractors, multiple queries, and repeated keys
//! with distinct values. Generation is fully seeded: needles, document
//! order, and depths all derive from the sample seed, and a shared ledger
//! keeps needle words and values globally unique so train and test splits
//! never overlap.

use crate::corpus::HaystackCorpus;
use crate::hash;
use crate::packing::TokenCounter;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Preamble for number-valued variants.
pub const PREAMBLE_NUMBERS: &str = "Some special magic numbers are hidden within the following text. Make sure to memorize it. I will quiz you about the numbers afterwards.";
/// Preamble for the multi-key variant, which advertises uuids instead.
pub const PREAMBLE_UUIDS: &str = "Some special magic uuids are hidden within the following text. Make sure to memorize it. I will quiz you about the uuids afterwards.";

const NEEDLE_NUMBERS: &str = "One of the special magic numbers for {word} is: {uuid}.";
const NEEDLE_UUIDS: &str = "One of the special magic uuids for {word} is: {uuid}.";
const QUESTION_ONE: &str = "What is the special magic number for {word} mentioned in the provided text?";
const QUESTION_ALL: &str = "What are all the special magic numbers for {words} mentioned in the provided text?";
const PREFIX_ONE: &str = "The special magic number for {word} mentioned in the provided text is";
const PREFIX_ALL: &str = "The special magic numbers for {words} mentioned in the provided text are";

/// Rejection-sampling cap when drawing needles against the ledger.
const MAX_DRAW_ATTEMPTS: usize = 10_000;
/// Full cycles over the corpus before giving up on a token budget.
const MAX_CORPUS_PASSES: usize = 1_000;

#[derive(Debug, Error)]
pub enum NiahError {
    #[error("target of {target} tokens is below the minimum of {min} (preamble plus needles plus one haystack token)")]
    TargetTooSmall { target: usize, min: usize },
    #[error("haystack corpus exhausted after {passes} passes while filling {target} tokens")]
    CorpusTooSmall { target: usize, passes: usize },
    #[error("fixed depth policy requires at least one depth")]
    EmptyDepths,
    #[error("depth {0} is outside [0, 1]")]
    InvalidDepth(f64),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("gave up drawing a fresh needle {0} after {1} attempts")]
    PoolExhausted(&'static str, usize),
    #[error("context misses its target by more than 2% ({actual} vs {target} tokens)")]
    Tolerance { target: usize, actual: usize },
}

/// The four retrieval task shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NiahVariant {
    Single,
    MultiKey,
    MultiQuery,
    MultiValue,
}

impl NiahVariant {
    pub const ALL: [NiahVariant; 4] = [
        NiahVariant::Single,
        NiahVariant::MultiKey,
        NiahVariant::MultiQuery,
        NiahVariant::MultiValue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NiahVariant::Single => "single",
            NiahVariant::MultiKey => "multi_key",
            NiahVariant::MultiQuery => "multi_query",
            NiahVariant::MultiValue => "multi_value",
        }
    }
}

impl std::str::FromStr for NiahVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(NiahVariant::Single),
            "multi_key" => Ok(NiahVariant::MultiKey),
            "multi_query" => Ok(NiahVariant::MultiQuery),
            "multi_value" => Ok(NiahVariant::MultiValue),
            other => Err(format!(
                "unknown variant `{other}` (expected single, multi_key, multi_query, or multi_value)"
            )),
        }
    }
}

/// One hidden fact: a random key word bound to a uuid value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Needle {
    pub key_word: String,
    pub value: String,
}

/// Where needles land in the haystack, as fractions of its length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthPolicy {
    UniformRandom,
    /// Cycled across needles in order; each depth must lie in [0, 1].
    Fixed(Vec<f64>),
}

/// Everything needed to generate one sample deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahConfig {
    pub variant: NiahVariant,
    /// Token budget for the whole context; 0 means needles only.
    pub target_tokens: usize,
    /// Distractor needles for `MultiKey` (the queried one is extra).
    pub n_keys: usize,
    /// Needles asked about by `MultiQuery`.
    pub n_queries: usize,
    /// Values sharing one key in `MultiValue`.
    pub n_values: usize,
    pub depth_policy: DepthPolicy,
    pub seed: u64,
}

/// A generated sample, self-contained for training or evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiahSample {
    pub id: String,
    pub variant: NiahVariant,
    pub context: String,
    pub question: String,
    pub answer_prefix: String,
    /// Values the answer must contain, in needle order.
    pub gold_values: Vec<String>,
    /// Requested depth fractions, in needle order; empty when needle-only.
    pub needle_depths: Vec<f64>,
    pub target_tokens: usize,
    pub actual_tokens: usize,
}

/// Registry of every needle word and value handed out so far. Threading one
/// ledger through all generation calls guarantees global uniqueness, which
/// makes train/test contamination checks a set intersection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeedleLedger {
    words: BTreeSet<String>,
    values: BTreeSet<String>,
}

impl NeedleLedger {
    pub fn new() -> Self {
        NeedleLedger::default()
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn contains_value(&self, value: &str) -> bool {
        self.values.contains(value)
    }

    pub fn record(&mut self, needle: &Needle) {
        self.words.insert(needle.key_word.clone());
        self.values.insert(needle.value.clone());
    }

    pub fn words(&self) -> &BTreeSet<String> {
        &self.words
    }

    pub fn values(&self) -> &BTreeSet<String> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// The preamble opening a variant's context.
pub fn preamble_for(variant: NiahVariant) -> &'static str {
    match variant {
        NiahVariant::MultiKey => PREAMBLE_UUIDS,
        _ => PREAMBLE_NUMBERS,
    }
}

/// The hidden sentence binding a needle's word to its value.
pub fn render_needle(variant: NiahVariant, needle: &Needle) -> String {
    let template = match variant {
        NiahVariant::MultiKey => NEEDLE_UUIDS,
        _ => NEEDLE_NUMBERS,
    };
    template.replace("{word}", &needle.key_word).replace("{uuid}", &needle.value)
}

/// Comma list with a final "and": `a`, `a and b`, `a, b, and c`.
fn join_words(words: &[String]) -> String {
    match words {
        [] => String::new(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        many => {
            let head = many[..many.len() - 1].join(", ");
            format!("{head}, and {}", many[many.len() - 1])
        }
    }
}

/// The question asked about the given key words (one word for all
/// variants except `MultiQuery`).
pub fn render_question(variant: NiahVariant, words: &[String]) -> String {
    match variant {
        NiahVariant::Single | NiahVariant::MultiKey => QUESTION_ONE.replace("{word}", &words[0]),
        NiahVariant::MultiQuery => QUESTION_ALL.replace("{words}", &join_words(words)),
        NiahVariant::MultiValue => QUESTION_ALL.replace("{words}", &words[0]),
    }
}

/// The assistant-turn opener the answer continues from.
pub fn render_answer_prefix(variant: NiahVariant, words: &[String]) -> String {
    match variant {
        NiahVariant::Single | NiahVariant::MultiKey => PREFIX_ONE.replace("{word}", &words[0]),
        NiahVariant::MultiQuery => PREFIX_ALL.replace("{words}", &join_words(words)),
        NiahVariant::MultiValue => PREFIX_ALL.replace("{words}", &words[0]),
    }
}

fn draw_word(
    rng: &mut ChaCha20Rng,
    ledger: &NeedleLedger,
    used: &BTreeSet<String>,
) -> Result<String, NiahError> {
    for _ in 0..MAX_DRAW_ATTEMPTS {
        let len = rng.gen_range(4..=12usize);
        let word: String = (0..len).map(|_| char::from(rng.gen_range(b'a'..=b'z'))).collect();
        if !ledger.contains_word(&word) && !used.contains(&word) {
            return Ok(word);
        }
    }
    Err(NiahError::PoolExhausted("word", MAX_DRAW_ATTEMPTS))
}

fn draw_value(
    rng: &mut ChaCha20Rng,
    ledger: &NeedleLedger,
    used: &BTreeSet<String>,
) -> Result<String, NiahError> {
    for _ in 0..MAX_DRAW_ATTEMPTS {
        let value = uuid::Builder::from_random_bytes(rng.gen()).into_uuid().to_string();
        if !ledger.contains_value(&value) && !used.contains(&value) {
            return Ok(value);
        }
    }
    Err(NiahError::PoolExhausted("value", MAX_DRAW_ATTEMPTS))
}

struct NeedleSet {
    needles: Vec<Needle>,
    /// Words named by the question, in needle order.
    question_words: Vec<String>,
    /// Values the answer must contain, in needle order.
    gold_values: Vec<String>,
}

fn draw_needles(
    config: &NiahConfig,
    rng: &mut ChaCha20Rng,
    ledger: &mut NeedleLedger,
) -> Result<NeedleSet, NiahError> {
    let mut used_words = BTreeSet::new();
    let mut used_values = BTreeSet::new();
    let mut fresh = |rng: &mut ChaCha20Rng| -> Result<Needle, NiahError> {
        let key_word = draw_word(rng, ledger, &used_words)?;
        let value = draw_value(rng, ledger, &used_values)?;
        used_words.insert(key_word.clone());
        used_values.insert(value.clone());
        Ok(Needle { key_word, value })
    };
    let set = match config.variant {
        NiahVariant::Single => {
            let needle = fresh(rng)?;
            NeedleSet {
                question_words: vec![needle.key_word.clone()],
                gold_values: vec![needle.value.clone()],
                needles: vec![needle],
            }
        }
        NiahVariant::MultiKey => {
            let total = config.n_keys + 1;
            let needles: Vec<Needle> = (0..total).map(|_| fresh(rng)).collect::<Result<_, _>>()?;
            let queried = rng.gen_range(0..total);
            NeedleSet {
                question_words: vec![needles[queried].key_word.clone()],
                gold_values: vec![needles[queried].value.clone()],
                needles,
            }
        }
        NiahVariant::MultiQuery => {
            if config.n_queries == 0 {
                return Err(NiahError::ZeroCount("n_queries"));
            }
            let needles: Vec<Needle> =
                (0..config.n_queries).map(|_| fresh(rng)).collect::<Result<_, _>>()?;
            NeedleSet {
                question_words: needles.iter().map(|n| n.key_word.clone()).collect(),
                gold_values: needles.iter().map(|n| n.value.clone()).collect(),
                needles,
            }
        }
        NiahVariant::MultiValue => {
            if config.n_values == 0 {
                return Err(NiahError::ZeroCount("n_values"));
            }
            let key_word = draw_word(rng, ledger, &used_words)?;
            used_words.insert(key_word.clone());
            let mut needles = Vec::with_capacity(config.n_values);
            for _ in 0..config.n_values {
                let value = draw_value(rng, ledger, &used_values)?;
                used_values.insert(value.clone());
                needles.push(Needle { key_word: key_word.clone(), value });
            }
            NeedleSet {
                question_words: vec![key_word],
                gold_values: needles.iter().map(|n| n.value.clone()).collect(),
                needles,
            }
        }
    };
    for needle in &set.needles {
        ledger.record(needle);
    }
    Ok(set)
}

/// Byte offsets where sentences may start: 0, each position after a
/// terminator-plus-whitespace run, and the end of the text. A plain
/// heuristic; abbreviations split, which is harmless for filler prose.
pub fn sentence_boundaries(text: &str) -> Vec<usize> {
    let mut out = vec![0];
    let mut after_terminator = false;
    let mut after_ws = false;
    for (i, c) in text.char_indices() {
        if after_terminator && after_ws && !c.is_whitespace() {
            out.push(i);
            after_terminator = false;
            after_ws = false;
        }
        if matches!(c, '.' | '!' | '?') {
            after_terminator = true;
            after_ws = false;
        } else if c.is_whitespace() {
            if after_terminator {
                after_ws = true;
            }
        } else {
            after_terminator = false;
            after_ws = false;
        }
    }
    if *out.last().unwrap() != text.len() {
        out.push(text.len());
    }
    out
}

/// Closest boundary to `target`; ties break toward the smaller offset.
fn nearest_boundary(bounds: &[usize], target: usize) -> usize {
    let idx = bounds.partition_point(|&b| b < target);
    let after = bounds.get(idx).copied();
    let before = idx.checked_sub(1).map(|i| bounds[i]);
    match (before, after) {
        (Some(b), Some(a)) => {
            if target - b <= a - target {
                b
            } else {
                a
            }
        }
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => 0,
    }
}

/// Inserts one needle at the sentence boundary nearest `depth` into the
/// text. Mid-text needles gain a trailing space, end-of-text ones a leading
/// space, so removing the inserted span restores the original exactly.
pub fn insert_at_depth(text: &str, needle_sentence: &str, depth: f64) -> (String, usize) {
    let bounds = sentence_boundaries(text);
    let target = (depth.clamp(0.0, 1.0) * text.len() as f64).round() as usize;
    let offset = nearest_boundary(&bounds, target);
    (splice(text, &[(offset, 0)], std::slice::from_ref(&needle_sentence.to_string())), offset)
}

/// Builds the spliced body; placements are (byte offset, needle index)
/// pairs sorted ascending, offsets lying on boundaries of `hay`.
fn splice(hay: &str, placements: &[(usize, usize)], needle_texts: &[String]) -> String {
    let extra: usize = placements.iter().map(|&(_, i)| needle_texts[i].len() + 1).sum();
    let mut out = String::with_capacity(hay.len() + extra);
    let mut prev = 0;
    for &(offset, i) in placements {
        out.push_str(&hay[prev..offset]);
        prev = offset;
        if offset == hay.len() && !hay.is_empty() {
            out.push(' ');
            out.push_str(&needle_texts[i]);
        } else {
            out.push_str(&needle_texts[i]);
            out.push(' ');
        }
    }
    out.push_str(&hay[prev..]);
    out
}

/// Word spans as (start, end) byte offsets, matching `split_whitespace`.
fn word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Cycles corpus documents in a seeded order until the would-be context
/// reaches the target, then cuts at the sentence boundary closest to it,
/// falling back to a word-level cut when the boundary misses 2%.
fn build_haystack(
    corpus: &HaystackCorpus,
    counter: &dyn TokenCounter,
    preamble: &str,
    needle_texts: &[String],
    target: usize,
    rng: &mut ChaCha20Rng,
) -> Result<String, NiahError> {
    // Needle placement never changes the totals of the shipped counters, so
    // appending the needles is an exact stand-in for the final context.
    let proxy = |hay: &str| -> usize {
        let mut s = String::with_capacity(preamble.len() + hay.len() + 64 * needle_texts.len());
        s.push_str(preamble);
        s.push('\n');
        s.push_str(hay);
        for text in needle_texts {
            s.push(' ');
            s.push_str(text);
        }
        count_str(counter, &s)
    };
    let base = proxy("");
    let min = base + 1;
    if target < min {
        return Err(NiahError::TargetTooSmall { target, min });
    }
    let budget = target - base;

    let mut order: Vec<usize> = (0..corpus.documents.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);

    let mut hay = String::new();
    let mut cursor = 0usize;
    let mut passes = 0usize;
    let append_next = |hay: &mut String, cursor: &mut usize, passes: &mut usize| -> Result<(), NiahError> {
        if *cursor == order.len() {
            *cursor = 0;
            *passes += 1;
            if *passes >= MAX_CORPUS_PASSES {
                return Err(NiahError::CorpusTooSmall { target, passes: MAX_CORPUS_PASSES });
            }
        }
        if !hay.is_empty() {
            hay.push_str("\n\n");
        }
        hay.push_str(&corpus.documents[order[*cursor]].text);
        *cursor += 1;
        Ok(())
    };
    // Fast fill by per-document counts, then verify against the full proxy.
    let mut acc = 0usize;
    while acc < budget {
        append_next(&mut hay, &mut cursor, &mut passes)?;
        acc = count_str(counter, &hay);
    }
    while proxy(&hay) < target {
        append_next(&mut hay, &mut cursor, &mut passes)?;
    }

    // Cut position search over word prefixes; proxy is monotone in words.
    let spans = word_spans(&hay);
    let total_words = spans.len();
    let f = |w: usize| -> usize {
        if w == 0 {
            base
        } else {
            proxy(&hay[..spans[w - 1].1])
        }
    };
    let quick = budget.clamp(1, total_words);
    let best_w = if f(quick) == target {
        quick
    } else {
        let (mut lo, mut hi) = (1usize, total_words);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if f(mid) >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let hi_dev = f(lo).abs_diff(target);
        let lo_dev = if lo > 1 { f(lo - 1).abs_diff(target) } else { usize::MAX };
        if lo_dev <= hi_dev {
            lo - 1
        } else {
            lo
        }
    };

    // Prefer ending on a sentence when that stays within tolerance.
    let bounds = sentence_boundaries(&hay);
    let mut words_before = Vec::with_capacity(bounds.len());
    let mut wi = 0usize;
    for &b in &bounds {
        while wi < spans.len() && spans[wi].1 <= b {
            wi += 1;
        }
        words_before.push(wi);
    }
    let sentence_w = bounds
        .iter()
        .zip(&words_before)
        .filter(|&(_, &w)| w >= 1)
        .min_by_key(|&(_, &w)| w.abs_diff(best_w))
        .map(|(_, &w)| w)
        .unwrap_or(best_w);
    let tolerance = 0.02 * target as f64;
    let w_cut = if (f(sentence_w).abs_diff(target)) as f64 <= tolerance {
        sentence_w
    } else {
        best_w
    };
    Ok(hay[..spans[w_cut - 1].1].to_string())
}

fn count_str(counter: &dyn TokenCounter, text: &str) -> usize {
    counter.count(text)
}

fn assign_depths(
    policy: &DepthPolicy,
    n: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<f64>, NiahError> {
    match policy {
        DepthPolicy::UniformRandom => Ok((0..n).map(|_| rng.gen::<f64>()).collect()),
        DepthPolicy::Fixed(depths) => {
            if depths.is_empty() {
                return Err(NiahError::EmptyDepths);
            }
            if let Some(&bad) = depths.iter().find(|d| !(0.0..=1.0).contains(*d)) {
                return Err(NiahError::InvalidDepth(bad));
            }
            Ok((0..n).map(|i| depths[i % depths.len()]).collect())
        }
    }
}

/// Generates one sample. The ledger is consulted for freshness and updated
/// with the needles used; identical (config, corpus, ledger) inputs yield
/// identical samples.
pub fn generate(
    id: &str,
    config: &NiahConfig,
    corpus: &HaystackCorpus,
    counter: &dyn TokenCounter,
    ledger: &mut NeedleLedger,
) -> Result<NiahSample, NiahError> {
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let set = draw_needles(config, &mut rng, ledger)?;
    let preamble = preamble_for(config.variant);
    let needle_texts: Vec<String> =
        set.needles.iter().map(|n| render_needle(config.variant, n)).collect();

    let (body, depths) = if config.target_tokens == 0 {
        (needle_texts.join(" "), Vec::new())
    } else {
        let hay = build_haystack(corpus, counter, preamble, &needle_texts, config.target_tokens, &mut rng)?;
        let depths = assign_depths(&config.depth_policy, needle_texts.len(), &mut rng)?;
        let bounds = sentence_boundaries(&hay);
        let mut placements: Vec<(usize, usize)> = depths
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let target = (d * hay.len() as f64).round() as usize;
                (nearest_boundary(&bounds, target), i)
            })
            .collect();
        placements.sort();
        (splice(&hay, &placements, &needle_texts), depths)
    };
    let context = format!("{preamble}\n{body}");
    let actual_tokens = counter.count(&context);
    if config.target_tokens >= 1_000 {
        let deviation = actual_tokens.abs_diff(config.target_tokens) as f64;
        if deviation > 0.02 * config.target_tokens as f64 {
            return Err(NiahError::Tolerance { target: config.target_tokens, actual: actual_tokens });
        }
    }
    Ok(NiahSample {
        id: id.to_string(),
        variant: config.variant,
        question: render_question(config.variant, &set.question_words),
        answer_prefix: render_answer_prefix(config.variant, &set.question_words),
        gold_values: set.gold_values,
        needle_depths: depths,
        target_tokens: config.target_tokens,
        actual_tokens,
        context,
    })
}

/// Curriculum stages: needles only, short mixed, and long contexts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotLevel {
    Sft2,
    Sft3,
    Sft4,
}

impl PilotLevel {
    pub const ALL: [PilotLevel; 3] = [PilotLevel::Sft2, PilotLevel::Sft3, PilotLevel::Sft4];

    pub fn as_str(self) -> &'static str {
        match self {
            PilotLevel::Sft2 => "sft2",
            PilotLevel::Sft3 => "sft3",
            PilotLevel::Sft4 => "sft4",
        }
    }

    pub fn target_tokens(self) -> usize {
        match self {
            PilotLevel::Sft2 => 0,
            PilotLevel::Sft3 => 1_000,
            PilotLevel::Sft4 => 64_000,
        }
    }
}

impl std::str::FromStr for PilotLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sft2" => Ok(PilotLevel::Sft2),
            "sft3" => Ok(PilotLevel::Sft3),
            "sft4" => Ok(PilotLevel::Sft4),
            other => Err(format!("unknown pilot level `{other}` (expected sft2, sft3, or sft4)")),
        }
    }
}

/// Small needle sets so the needle-only stage stays well under 200 tokens.
fn pilot_config(level: PilotLevel, variant: NiahVariant, seed: u64) -> NiahConfig {
    NiahConfig {
        variant,
        target_tokens: level.target_tokens(),
        n_keys: 3,
        n_queries: 4,
        n_values: 4,
        depth_policy: DepthPolicy::UniformRandom,
        seed,
    }
}

/// Generates `per_subtask` samples for each of the four variants at one
/// curriculum level. Ids look like `sft3-multi_key-0007`; each sample's
/// seed derives from the dataset seed and its id.
pub fn gen_pilot_dataset(
    level: PilotLevel,
    per_subtask: usize,
    corpus: &HaystackCorpus,
    counter: &dyn TokenCounter,
    seed: u64,
    ledger: &mut NeedleLedger,
) -> Result<Vec<NiahSample>, NiahError> {
    let mut out = Vec::with_capacity(per_subtask * NiahVariant::ALL.len());
    for variant in NiahVariant::ALL {
        for i in 0..per_subtask {
            let id = format!("{}-{}-{:04}", level.as_str(), variant.as_str(), i);
            let config = pilot_config(level, variant, hash::derived_seed(seed, &id));
            out.push(generate(&id, &config, corpus, counter, ledger)?);
        }
    }
    Ok(out)
}

/// Generates an evaluation grid for one variant across context lengths,
/// with the full 32-distractor setting for `MultiKey`. Passing the ledger
/// used during training keeps evaluation needles disjoint from it.
pub fn gen_test_suite(
    variant: NiahVariant,
    lengths: &[usize],
    n_per_length: usize,
    corpus: &HaystackCorpus,
    counter: &dyn TokenCounter,
    seed: u64,
    ledger: &mut NeedleLedger,
) -> Result<Vec<NiahSample>, NiahError> {
    let mut out = Vec::with_capacity(lengths.len() * n_per_length);
    for &length in lengths {
        for i in 0..n_per_length {
            let id = format!("test-{}-{}-{}", variant.as_str(), length, i);
            let config = NiahConfig {
                variant,
                target_tokens: length,
                n_keys: 32,
                n_queries: 4,
                n_values: 4,
                depth_policy: DepthPolicy::UniformRandom,
                seed: hash::derived_seed(seed, &id),
            };
            out.push(generate(&id, &config, corpus, counter, ledger)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::HaystackDoc;
    use crate::filler;
    use crate::packing::WhitespaceCounter;
    use crate::scoring::score_em;
    use proptest::prelude::*;
    use uuid::Uuid;

    fn corpus(docs: usize, words_each: usize, seed: u64) -> HaystackCorpus {
        let documents = (0..docs)
            .map(|i| {
                let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(i as u64));
                HaystackDoc {
                    id: format!("doc-{i:02}"),
                    text: filler::essay(&mut rng, words_each),
                }
            })
            .collect();
        HaystackCorpus::from_documents(documents)
    }

    fn config(variant: NiahVariant, target: usize, seed: u64) -> NiahConfig {
        NiahConfig {
            variant,
            target_tokens: target,
            n_keys: 3,
            n_queries: 4,
            n_values: 4,
            depth_policy: DepthPolicy::UniformRandom,
            seed,
        }
    }

    fn gen(cfg: &NiahConfig, corp: &HaystackCorpus) -> NiahSample {
        generate("t", cfg, corp, &WhitespaceCounter, &mut NeedleLedger::new()).unwrap()
    }

    #[test]
    fn needle_words_and_values_are_well_formed() {
        let corp = corpus(3, 400, 1);
        let sample = gen(&config(NiahVariant::Single, 0, 7), &corp);
        let needle = sample.context.lines().nth(1).unwrap();
        let word = needle
            .strip_prefix("One of the special magic numbers for ")
            .unwrap()
            .split(' ')
            .next()
            .unwrap();
        assert!((4..=12).contains(&word.len()));
        assert!(word.bytes().all(|b| b.is_ascii_lowercase()));
        let value = needle.rsplit(' ').next().unwrap().strip_suffix('.').unwrap();
        assert!(Uuid::parse_str(value).is_ok());
        assert_eq!(value, sample.gold_values[0]);
    }

    #[test]
    fn rendered_strings_follow_the_fixed_wording() {
        let corp = corpus(3, 400, 1);
        let single = gen(&config(NiahVariant::Single, 0, 11), &corp);
        assert!(single.context.starts_with(PREAMBLE_NUMBERS));
        let word = single
            .question
            .strip_prefix("What is the special magic number for ")
            .unwrap()
            .strip_suffix(" mentioned in the provided text?")
            .unwrap()
            .to_string();
        assert_eq!(
            single.answer_prefix,
            format!("The special magic number for {word} mentioned in the provided text is")
        );

        let multi_key = gen(&config(NiahVariant::MultiKey, 0, 12), &corp);
        assert!(multi_key.context.starts_with(PREAMBLE_UUIDS));
        assert_eq!(multi_key.context.matches("One of the special magic uuids for ").count(), 4);
        assert!(multi_key.question.starts_with("What is the special magic number for "));
        assert_eq!(multi_key.gold_values.len(), 1);

        let multi_query = gen(&config(NiahVariant::MultiQuery, 0, 13), &corp);
        let words: Vec<String> = multi_query
            .context
            .lines()
            .nth(1)
            .unwrap()
            .split("One of the special magic numbers for ")
            .skip(1)
            .map(|rest| rest.split(' ').next().unwrap().to_string())
            .collect();
        assert_eq!(words.len(), 4);
        assert_eq!(
            multi_query.question,
            format!(
                "What are all the special magic numbers for {}, {}, {}, and {} mentioned in the provided text?",
                words[0], words[1], words[2], words[3]
            )
        );
        assert_eq!(
            multi_query.answer_prefix,
            format!(
                "The special magic numbers for {}, {}, {}, and {} mentioned in the provided text are",
                words[0], words[1], words[2], words[3]
            )
        );
        assert_eq!(multi_query.gold_values.len(), 4);

        let multi_value = gen(&config(NiahVariant::MultiValue, 0, 14), &corp);
        let word = multi_value
            .question
            .strip_prefix("What are all the special magic numbers for ")
            .unwrap()
            .strip_suffix(" mentioned in the provided text?")
            .unwrap()
            .to_string();
        assert_eq!(multi_value.context.matches(&format!(" for {word} is: ")).count(), 4);
        assert_eq!(
            multi_value.answer_prefix,
            format!("The special magic numbers for {word} mentioned in the provided text are")
        );
        assert_eq!(multi_value.gold_values.len(), 4);
    }

    #[test]
    fn word_joining() {
        let w = |s: &str| s.to_string();
        assert_eq!(join_words(&[w("a")]), "a");
        assert_eq!(join_words(&[w("a"), w("b")]), "a and b");
        assert_eq!(join_words(&[w("a"), w("b"), w("c")]), "a, b, and c");
        assert_eq!(join_words(&[w("a"), w("b"), w("c"), w("d")]), "a, b, c, and d");
    }

    #[test]
    fn needle_only_mode_is_compact() {
        let corp = corpus(1, 50, 1);
        for variant in NiahVariant::ALL {
            let sample = gen(&config(variant, 0, 21), &corp);
            assert!(sample.needle_depths.is_empty());
            assert!(sample.actual_tokens < 200, "{variant:?} too long: {}", sample.actual_tokens);
            // No filler leaks in: every body line is preamble or needles.
            assert_eq!(sample.context.lines().count(), 2);
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let corp = corpus(4, 300, 2);
        let a = gen(&config(NiahVariant::MultiQuery, 1_000, 5), &corp);
        let b = gen(&config(NiahVariant::MultiQuery, 1_000, 5), &corp);
        assert_eq!(a, b);
        let c = gen(&config(NiahVariant::MultiQuery, 1_000, 6), &corp);
        assert_ne!(a.context, c.context);
        assert_ne!(a.gold_values, c.gold_values);
    }

    #[test]
    fn token_budget_is_respected() {
        let corp = corpus(4, 500, 3);
        for (variant, target) in [
            (NiahVariant::Single, 1_000),
            (NiahVariant::MultiKey, 1_000),
            (NiahVariant::MultiQuery, 4_000),
            (NiahVariant::MultiValue, 2_000),
        ] {
            let sample = gen(&config(variant, target, 31), &corp);
            let deviation = sample.actual_tokens.abs_diff(target) as f64;
            assert!(
                deviation <= 0.02 * target as f64,
                "{variant:?}: {} vs {target}",
                sample.actual_tokens
            );
            assert_eq!(sample.actual_tokens, WhitespaceCounter.count(&sample.context));
        }
    }

    #[test]
    fn gold_values_appear_exactly_once_and_em_is_one() {
        let corp = corpus(4, 500, 4);
        for variant in NiahVariant::ALL {
            let sample = gen(&config(variant, 1_500, 41), &corp);
            for value in &sample.gold_values {
                assert_eq!(sample.context.matches(value.as_str()).count(), 1, "{variant:?}");
            }
            assert_eq!(score_em(&sample.context, &sample.gold_values), 1.0);
            assert_eq!(sample.needle_depths.len(), sample.context.matches(" is: ").count());
        }
    }

    #[test]
    fn sentence_boundary_detection() {
        assert_eq!(sentence_boundaries(""), vec![0]);
        assert_eq!(sentence_boundaries("No terminator"), vec![0, 13]);
        let text = "One two. Three four! Five?  Six";
        //          0        9         21      28
        assert_eq!(sentence_boundaries(text), vec![0, 9, 21, 28, text.len()]);
        // Decimal points and ellipses do not split.
        assert_eq!(sentence_boundaries("pi is 3.14 here"), vec![0, 15]);
        assert_eq!(sentence_boundaries("Wait... done."), vec![0, 8, 13]);
        // Paragraph break counts as one boundary.
        assert_eq!(sentence_boundaries("End.\n\nNext"), vec![0, 6, 10]);
    }

    #[test]
    fn depth_insertion_lands_on_boundaries_and_splices_out() {
        let text = "First sentence here. Second one follows. Third closes.";
        let needle = "One of the special magic numbers for abcd is: 1-2.";
        let (start, off0) = insert_at_depth(text, needle, 0.0);
        assert_eq!(off0, 0);
        assert_eq!(start, format!("{needle} {text}"));
        let (end, off1) = insert_at_depth(text, needle, 1.0);
        assert_eq!(off1, text.len());
        assert_eq!(end, format!("{text} {needle}"));
        let (mid, off) = insert_at_depth(text, needle, 0.5);
        assert!(off == 21 || off == 42, "boundary, got {off}");
        assert_eq!(mid.replace(&format!("{needle} "), ""), text, "splice-out restores");
    }

    proptest! {
        #[test]
        fn boundaries_are_sorted_unique_char_positions(text in "[a-z .!?\n]{0,80}") {
            let bounds = sentence_boundaries(&text);
            prop_assert_eq!(bounds[0], 0);
            prop_assert_eq!(*bounds.last().unwrap(), text.len());
            prop_assert!(bounds.windows(2).all(|w| w[0] < w[1]) || bounds.len() == 1);
            prop_assert!(bounds.iter().all(|&b| text.is_char_boundary(b)));
        }

        #[test]
        fn insertion_splices_out(depth in 0.0f64..=1.0, seed in 0u64..500) {
            let text = filler::paragraph(&mut ChaCha20Rng::seed_from_u64(seed), 60);
            let needle = "One of the special magic numbers for vwxyz is: 9.";
            let (spliced, offset) = insert_at_depth(&text, needle, depth);
            let restored = if offset == text.len() {
                spliced.replace(&format!(" {needle}"), "")
            } else {
                spliced.replace(&format!("{needle} "), "")
            };
            prop_assert_eq!(restored, text);
        }
    }

    #[test]
    fn fixed_depths_cycle_and_pin_positions() {
        let corp = corpus(4, 300, 5);
        let mut cfg = config(NiahVariant::MultiQuery, 1_000, 51);
        cfg.depth_policy = DepthPolicy::Fixed(vec![0.0, 1.0]);
        let sample = gen(&cfg, &corp);
        assert_eq!(sample.needle_depths, vec![0.0, 1.0, 0.0, 1.0]);
        let body = sample.context.split_once('\n').unwrap().1;
        assert!(body.starts_with("One of the special magic numbers for "));
        assert!(body.ends_with('.') && body.rfind(" is: ").unwrap() > body.len() - 60);
    }

    #[test]
    fn invalid_policies_and_counts_error() {
        let corp = corpus(2, 300, 6);
        let mut cfg = config(NiahVariant::Single, 1_000, 61);
        cfg.depth_policy = DepthPolicy::Fixed(vec![]);
        let err = generate("t", &cfg, &corp, &WhitespaceCounter, &mut NeedleLedger::new());
        assert!(matches!(err, Err(NiahError::EmptyDepths)));
        cfg.depth_policy = DepthPolicy::Fixed(vec![0.5, 1.5]);
        let err = generate("t", &cfg, &corp, &WhitespaceCounter, &mut NeedleLedger::new());
        assert!(matches!(err, Err(NiahError::InvalidDepth(d)) if d == 1.5));
        let mut cfg = config(NiahVariant::MultiQuery, 0, 62);
        cfg.n_queries = 0;
        let err = generate("t", &cfg, &corp, &WhitespaceCounter, &mut NeedleLedger::new());
        assert!(matches!(err, Err(NiahError::ZeroCount("n_queries"))));
        let mut cfg = config(NiahVariant::MultiValue, 0, 63);
        cfg.n_values = 0;
        let err = generate("t", &cfg, &corp, &WhitespaceCounter, &mut NeedleLedger::new());
        assert!(matches!(err, Err(NiahError::ZeroCount("n_values"))));
    }

    #[test]
    fn undersized_targets_and_corpora_error() {
        let corp = corpus(2, 300, 7);
        let err = generate(
            "t",
            &config(NiahVariant::Single, 10, 71),
            &corp,
            &WhitespaceCounter,
            &mut NeedleLedger::new(),
        );
        match err {
            Err(NiahError::TargetTooSmall { target: 10, min }) => assert!(min > 30),
            other => panic!("{other:?}"),
        }
        let tiny = HaystackCorpus::from_documents(vec![HaystackDoc {
            id: "d".into(),
            text: "Tiny doc here.".into(),
        }]);
        let err = generate(
            "t",
            &config(NiahVariant::Single, 50_000, 72),
            &tiny,
            &WhitespaceCounter,
            &mut NeedleLedger::new(),
        );
        assert!(matches!(err, Err(NiahError::CorpusTooSmall { .. })));
    }

    #[test]
    fn ledger_keeps_needles_globally_unique() {
        let corp = corpus(3, 300, 8);
        let mut ledger = NeedleLedger::new();
        let mut samples = Vec::new();
        for i in 0..20 {
            samples.push(
                generate(
                    &format!("s{i}"),
                    &config(NiahVariant::MultiQuery, 0, 800 + i),
                    &corp,
                    &WhitespaceCounter,
                    &mut ledger,
                )
                .unwrap(),
            );
        }
        let all_values: Vec<&String> = samples.iter().flat_map(|s| &s.gold_values).collect();
        let unique: BTreeSet<&&String> = all_values.iter().collect();
        assert_eq!(unique.len(), all_values.len(), "values never repeat");
        assert_eq!(ledger.len(), all_values.len());
        // A value from sample 0 never shows up in any later context.
        for later in &samples[1..] {
            assert!(!later.context.contains(samples[0].gold_values[0].as_str()));
        }
    }

    #[test]
    fn pilot_dataset_shape_and_budgets() {
        let corp = corpus(4, 400, 9);
        let mut ledger = NeedleLedger::new();
        let sft2 =
            gen_pilot_dataset(PilotLevel::Sft2, 2, &corp, &WhitespaceCounter, 99, &mut ledger).unwrap();
        assert_eq!(sft2.len(), 8);
        assert_eq!(sft2[0].id, "sft2-single-0000");
        assert_eq!(sft2[3].id, "sft2-multi_key-0001");
        assert!(sft2.iter().all(|s| s.actual_tokens < 200));
        // Multi-key pilots carry three distractors plus the queried needle.
        let mk = sft2.iter().find(|s| s.variant == NiahVariant::MultiKey).unwrap();
        assert_eq!(mk.context.matches("One of the special magic uuids").count(), 4);

        let sft3 =
            gen_pilot_dataset(PilotLevel::Sft3, 2, &corp, &WhitespaceCounter, 99, &mut ledger).unwrap();
        assert_eq!(sft3.len(), 8);
        for sample in &sft3 {
            assert!(sample.actual_tokens.abs_diff(1_000) <= 20, "{}", sample.actual_tokens);
        }
        // Replaying with a fresh ledger in the same state reproduces ids
        // and contents byte for byte.
        let mut replay_ledger = NeedleLedger::new();
        let replay =
            gen_pilot_dataset(PilotLevel::Sft2, 2, &corp, &WhitespaceCounter, 99, &mut replay_ledger).unwrap();
        assert_eq!(replay, sft2);
    }

    #[test]
    fn test_suite_uses_full_distractor_count_and_avoids_ledger() {
        let corp = corpus(4, 400, 10);
        let mut ledger = NeedleLedger::new();
        let pilot =
            gen_pilot_dataset(PilotLevel::Sft2, 2, &corp, &WhitespaceCounter, 7, &mut ledger).unwrap();
        let train_values: BTreeSet<String> =
            pilot.iter().flat_map(|s| s.gold_values.clone()).collect();
        let tests = gen_test_suite(
            NiahVariant::MultiKey,
            &[1_000, 2_000],
            2,
            &corp,
            &WhitespaceCounter,
            7,
            &mut ledger,
        )
        .unwrap();
        assert_eq!(tests.len(), 4);
        assert_eq!(tests[0].id, "test-multi_key-1000-0");
        for sample in &tests {
            assert_eq!(sample.context.matches("One of the special magic uuids").count(), 33);
            for value in &sample.gold_values {
                assert!(!train_values.contains(value), "train/test needle leak");
            }
        }
    }

    #[test]
    fn variant_and_level_names_round_trip() {
        for variant in NiahVariant::ALL {
            assert_eq!(variant.as_str().parse::<NiahVariant>().unwrap(), variant);
        }
        for level in PilotLevel::ALL {
            assert_eq!(level.as_str().parse::<PilotLevel>().unwrap(), level);
        }
        assert!("both".parse::<NiahVariant>().is_err());
        assert!("sft5".parse::<PilotLevel>().is_err());
    }
}
