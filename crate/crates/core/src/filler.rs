//! Deterministic filler prose.
//!
//! The mock engine uses this to produce plausible context and QA bodies, and
//! tests use it to build synthetic essay corpora. Sentences are short and
//! plain so sentence-boundary logic elsewhere behaves predictably, and the
//! lexicon contains nothing that collides with template markers or UUIDs.

use rand::Rng;

const LEXICON: &[&str] = &[
    "archive", "autumn", "balance", "bridge", "canal", "cedar", "census", "channel", "charter",
    "climate", "colony", "compass", "council", "courier", "current", "delta", "district", "draft",
    "engine", "estuary", "ferry", "field", "forest", "furnace", "garden", "granite", "harbor",
    "harvest", "hillside", "journal", "junction", "kiln", "lantern", "ledger", "library", "lumber",
    "market", "meadow", "meridian", "mill", "monsoon", "orchard", "outpost", "parish", "passage",
    "pavilion", "plateau", "quarry", "railway", "reservoir", "ridge", "river", "saltworks",
    "schooner", "seminar", "settlement", "shoreline", "signal", "smithy", "spring", "station",
    "summit", "surveyor", "terrace", "timber", "trade", "treaty", "tunnel", "valley", "village",
    "vineyard", "voyage", "warehouse", "waterway", "weather", "windmill", "winter", "workshop",
];

fn word(rng: &mut impl Rng) -> &'static str {
    LEXICON[rng.gen_range(0..LEXICON.len())]
}

/// `n` lexicon words joined by single spaces.
pub fn words(rng: &mut impl Rng, n: usize) -> String {
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(word(rng));
    }
    out
}

/// One sentence of exactly `n` words, capitalized and period-terminated.
pub fn sentence(rng: &mut impl Rng, n: usize) -> String {
    let mut s = words(rng, n.max(1));
    let first = s.remove(0).to_ascii_uppercase();
    format!("{first}{s}.")
}

/// Space-joined sentences of 8 to 16 words totalling roughly `target_words`.
pub fn paragraph(rng: &mut impl Rng, target_words: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    while count < target_words {
        let n = rng.gen_range(8..=16).min(target_words.saturating_sub(count).max(4));
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&sentence(rng, n));
        count += n;
    }
    out
}

/// Multi-paragraph essay of roughly `target_words`, paragraphs of ~80 words.
pub fn essay(rng: &mut impl Rng, target_words: usize) -> String {
    let mut out = String::new();
    let mut count = 0;
    while count < target_words {
        let chunk = 80.min(target_words - count);
        if !out.is_empty() {
            out.push_str("\n\n");
        }
        out.push_str(&paragraph(rng, chunk));
        count += chunk;
    }
    out
}

/// A question sentence built from filler words.
pub fn question(rng: &mut impl Rng, n: usize) -> String {
    format!("What does the passage explain about the {}?", words(rng, n.max(1)))
}
