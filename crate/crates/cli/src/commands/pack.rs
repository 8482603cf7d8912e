//! Sequence packing: composed samples become fixed-capacity training
//! sequences with per-segment loss weights.

use super::{counter, header, out_path};
use crate::config::PipelineConfig;
use ctxsynth::compose::{assemble_prompt, ComposedSample};
use ctxsynth::packing::{loss_weights, pack as pack_items, PackItem};
use ctxsynth::record::{read_jsonl, JsonlWriter};
use std::path::PathBuf;

pub fn pack(
    mut config: PipelineConfig,
    input: Option<PathBuf>,
    max_len: Option<usize>,
    counter_name: Option<String>,
) -> anyhow::Result<()> {
    if let Some(v) = max_len {
        config.packing.max_len = v;
    }
    if let Some(v) = counter_name {
        config.packing.counter = v;
    }

    let input = match input {
        Some(p) => p,
        None => out_path(&config, "composed.jsonl")?,
    };
    let (_, samples): (_, Vec<ComposedSample>) = read_jsonl(&input)?;
    anyhow::ensure!(!samples.is_empty(), "no composed samples in {}", input.display());

    let counter = counter(&config.packing.counter)?;
    let items: Vec<PackItem> = samples
        .iter()
        .map(|sample| {
            let record = assemble_prompt(sample, &config.composition.layout);
            PackItem {
                id: record.id,
                prompt_tokens: counter.count(&record.prompt),
                answer_tokens: counter.count(&record.answer),
            }
        })
        .collect();

    let outcome = pack_items(&items, config.packing.max_len)?;
    let packs = loss_weights(outcome.packs)?;

    let head = header(&config, None);
    let out = out_path(&config, "packed.jsonl")?;
    let mut writer = JsonlWriter::create(&out, Some(&head))?;
    for sequence in &packs {
        writer.write(sequence)?;
    }
    writer.finish()?;

    let oversize_path = out_path(&config, "oversize.jsonl")?;
    let mut oversize_writer = JsonlWriter::create(&oversize_path, Some(&head))?;
    for item in &outcome.oversize {
        oversize_writer.write(item)?;
    }
    oversize_writer.finish()?;

    if !outcome.oversize.is_empty() {
        eprintln!(
            "warning: {} records exceed max_len {} and were diverted to {}",
            outcome.oversize.len(),
            config.packing.max_len,
            oversize_path.display()
        );
    }
    let segments: usize = packs.iter().map(|p| p.segments.len()).sum();
    println!(
        "packed {segments} records into {} sequences (max_len {}) at {}",
        packs.len(),
        config.packing.max_len,
        out.display()
    );
    Ok(())
}
