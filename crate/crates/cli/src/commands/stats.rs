//! Token-length distribution of one text field across a JSONL file.

use super::{counter, header, out_path};
use crate::config::PipelineConfig;
use ctxsynth::compose::{length_stats_texts, LengthDistribution};
use ctxsynth::record::{read_jsonl, write_text, JsonlWriter};
use serde::Serialize;
use std::path::PathBuf;

#[derive(Serialize)]
struct StatsRow<'a> {
    field: &'a str,
    counter: &'a str,
    n: usize,
    #[serde(flatten)]
    distribution: LengthDistribution,
}

pub fn stats(
    mut config: PipelineConfig,
    input: PathBuf,
    field: String,
    counter_name: Option<String>,
    output: Option<String>,
) -> anyhow::Result<()> {
    if let Some(v) = counter_name {
        config.packing.counter = v;
    }
    let counter = counter(&config.packing.counter)?;

    let (_, rows): (_, Vec<serde_json::Value>) = read_jsonl(&input)?;
    anyhow::ensure!(!rows.is_empty(), "no records in {}", input.display());
    let texts: Vec<&str> =
        rows.iter().filter_map(|row| row.get(&field).and_then(|v| v.as_str())).collect();
    anyhow::ensure!(
        texts.len() == rows.len(),
        "field `{field}` missing or not a string on {} of {} rows in {}",
        rows.len() - texts.len(),
        rows.len(),
        input.display()
    );

    let distribution = length_stats_texts(texts.iter().copied(), counter.as_ref())?;
    let base = output.unwrap_or_else(|| "stats".to_string());
    let out = out_path(&config, &format!("{base}.jsonl"))?;
    let mut writer = JsonlWriter::create(&out, Some(&header(&config, None)))?;
    writer.write(&StatsRow {
        field: &field,
        counter: counter.name(),
        n: rows.len(),
        distribution: distribution.clone(),
    })?;
    writer.finish()?;

    let table = format!(
        "field {field} over {} records ({} tokens)\n\
         min     {:>10}\n\
         p25     {:>10.1}\n\
         median  {:>10.1}\n\
         p75     {:>10.1}\n\
         max     {:>10}\n\
         mean    {:>10.1}\n",
        rows.len(),
        counter.name(),
        distribution.min,
        distribution.p25,
        distribution.median,
        distribution.p75,
        distribution.max,
        distribution.mean
    );
    write_text(&out_path(&config, &format!("{base}.txt"))?, &table)?;

    println!(
        "stats over {} records: median {:.1}, mean {:.1} tokens ({})",
        rows.len(),
        distribution.median,
        distribution.mean,
        out.display()
    );
    Ok(())
}
