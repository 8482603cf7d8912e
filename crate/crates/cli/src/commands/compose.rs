//! Context composition: each pair's context concatenated with seeded
//! distractor contexts, or stripped to its context-free twin.

use super::{header, out_path};
use crate::config::PipelineConfig;
use anyhow::Context;
use ctxsynth::compose::{concatenate, make_context_free};
use ctxsynth::corpus::load_pairs;
use ctxsynth::hash;
use ctxsynth::record::{read_jsonl, JsonlWriter};
use ctxsynth::synthesis::ContextRecord;
use std::collections::BTreeMap;
use std::path::PathBuf;

pub fn compose(
    mut config: PipelineConfig,
    contexts: Option<PathBuf>,
    n: Option<usize>,
    seed: Option<u64>,
    context_free: bool,
    same_task_only: bool,
) -> anyhow::Result<()> {
    if let Some(v) = n {
        config.composition.n = v;
    }
    if let Some(v) = seed {
        config.composition.seed = v;
    }
    if same_task_only {
        config.composition.same_task_only = true;
    }

    let pairs = load_pairs(&config.paths.pairs, &config.fields)?;
    let contexts_path = match contexts {
        Some(p) => p,
        None => out_path(&config, "contexts.jsonl")?,
    };
    let (_, records): (_, Vec<ContextRecord>) = read_jsonl(&contexts_path)?;
    anyhow::ensure!(!records.is_empty(), "no contexts in {}", contexts_path.display());

    let mut by_pair: BTreeMap<&str, &ContextRecord> = BTreeMap::new();
    for rec in &records {
        if by_pair.insert(rec.pair_id.as_str(), rec).is_some() {
            anyhow::bail!(
                "duplicate context for pair `{}` in {}",
                rec.pair_id,
                contexts_path.display()
            );
        }
    }
    let task_of: BTreeMap<&str, &str> =
        pairs.iter().map(|p| (p.id.as_str(), p.task.as_str())).collect();
    // Per-task pools only materialize when the switch is on.
    let task_pools: BTreeMap<&str, Vec<ContextRecord>> = if config.composition.same_task_only {
        let mut pools: BTreeMap<&str, Vec<ContextRecord>> = BTreeMap::new();
        for rec in &records {
            if let Some(task) = task_of.get(rec.pair_id.as_str()) {
                pools.entry(task).or_default().push(rec.clone());
            }
        }
        pools
    } else {
        BTreeMap::new()
    };

    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for pair in &pairs {
        let Some(context) = by_pair.get(pair.id.as_str()) else {
            skipped += 1;
            continue;
        };
        let pool: &[ContextRecord] = if config.composition.same_task_only {
            task_pools.get(pair.task.as_str()).map(Vec::as_slice).unwrap_or(&[])
        } else {
            &records
        };
        let sample_seed = hash::derived_seed(config.composition.seed, &pair.id);
        let sample = concatenate(pair, context, pool, config.composition.n, sample_seed)
            .with_context(|| format!("composing pair `{}`", pair.id))?;
        samples.push(if context_free { make_context_free(&sample)? } else { sample });
    }
    anyhow::ensure!(
        !samples.is_empty(),
        "no pair in {} has a context in {}",
        config.paths.pairs.display(),
        contexts_path.display()
    );

    let name = if context_free { "context_free.jsonl" } else { "composed.jsonl" };
    let out = out_path(&config, name)?;
    let mut writer = JsonlWriter::create(&out, Some(&header(&config, Some(config.composition.seed))))?;
    for sample in &samples {
        writer.write(sample)?;
    }
    writer.finish()?;

    if skipped > 0 {
        eprintln!("warning: {skipped} pairs had no context and were skipped");
    }
    println!("wrote {} composed samples (n={}) to {}", samples.len(), config.composition.n, out.display());
    Ok(())
}
