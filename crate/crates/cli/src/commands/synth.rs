//! The two synthesis stages: contexts from pairs, and QA pairs from
//! contexts (the baseline direction).

use super::{header, out_path};
use crate::config::PipelineConfig;
use anyhow::Context;
use ctxsynth::corpus::{load_pairs, sample_per_task};
use ctxsynth::engine::EngineClient;
use ctxsynth::record::JsonlWriter;
use ctxsynth::synthesis::{
    synthesize_contexts, synthesize_instructions, ContextRecord, SynthesisFailure, SynthesizedQA,
    TemplateMode,
};
use std::collections::BTreeMap;
use std::path::PathBuf;

fn build_client(config: &PipelineConfig, engine_id: &str) -> anyhow::Result<EngineClient> {
    let client = EngineClient::from_specs(&config.engines, config.retry.clone())?;
    // Fail on a bad engine id or missing credential before any request.
    client.validate(engine_id)?;
    Ok(client)
}

pub fn synth_context(
    mut config: PipelineConfig,
    engine: Option<String>,
    target_words: Option<usize>,
    max_in_flight: Option<usize>,
    n_per_task: Option<usize>,
) -> anyhow::Result<()> {
    let synth = &mut config.synthesis;
    if let Some(v) = engine {
        synth.engine = v;
    }
    if let Some(v) = target_words {
        synth.target_words = v;
    }
    if let Some(v) = max_in_flight {
        synth.max_in_flight = v;
    }
    if let Some(v) = n_per_task {
        synth.n_per_task = v;
    }

    let pairs = load_pairs(&config.paths.pairs, &config.fields)?;
    let total = pairs.len();
    let mut pairs: Vec<_> = pairs.into_iter().filter(|p| p.requires_context).collect();
    if config.synthesis.n_per_task > 0 {
        pairs = sample_per_task(&pairs, config.synthesis.n_per_task, config.synthesis.sample_seed);
    }
    anyhow::ensure!(
        !pairs.is_empty(),
        "no pairs require context synthesis ({total} loaded from {})",
        config.paths.pairs.display()
    );

    let client = build_client(&config, &config.synthesis.engine)?;
    let outcome = synthesize_contexts(
        &pairs,
        &client,
        &config.synthesis.engine,
        config.synthesis.target_words,
        config.synthesis.max_in_flight,
    )?;

    let head = header(&config, Some(config.synthesis.sample_seed));
    let out = out_path(&config, "contexts.jsonl")?;
    write_rows(&out, &head, &outcome.records)?;
    write_rows(&out_path(&config, "synth_context_failures.jsonl")?, &head, &outcome.failures)?;
    write_rows(&out_path(&config, "synth_context_audit.jsonl")?, &head, &outcome.audit)?;

    if !outcome.failures.is_empty() {
        eprintln!("warning: {} of {} pairs failed synthesis", outcome.failures.len(), pairs.len());
    }
    if outcome.unlabeled > 0 {
        eprintln!("warning: {} responses arrived without the Context: label", outcome.unlabeled);
    }
    println!("wrote {} contexts to {}", outcome.records.len(), out.display());
    Ok(())
}

pub fn synth_instruction(
    mut config: PipelineConfig,
    engine: Option<String>,
    mode: Option<String>,
    contexts: Option<PathBuf>,
    max_in_flight: Option<usize>,
) -> anyhow::Result<()> {
    let synth = &mut config.synthesis;
    if let Some(v) = engine {
        synth.engine = v;
    }
    if let Some(v) = mode {
        synth.mode = v;
    }
    if let Some(v) = max_in_flight {
        synth.max_in_flight = v;
    }

    // Task names ride along for per-task template selection.
    let inputs: Vec<(String, String, Option<String>)> = match &contexts {
        Some(path) => {
            let (_, records): (_, Vec<ContextRecord>) = ctxsynth::record::read_jsonl(path)?;
            let tasks: BTreeMap<String, String> = load_pairs(&config.paths.pairs, &config.fields)
                .map(|pairs| pairs.into_iter().map(|p| (p.id, p.task)).collect())
                .unwrap_or_default();
            records
                .into_iter()
                .map(|c| {
                    let task = tasks.get(&c.pair_id).cloned();
                    (c.pair_id, c.text, task)
                })
                .collect()
        }
        None => load_pairs(&config.paths.pairs, &config.fields)?
            .into_iter()
            .filter_map(|p| p.source_context.map(|c| (p.id, c, Some(p.task))))
            .collect(),
    };
    anyhow::ensure!(!inputs.is_empty(), "no contexts to synthesize questions from");

    let auto = config.synthesis.mode == "auto";
    let fixed_mode = if auto {
        None
    } else {
        Some(config.synthesis.mode.parse::<TemplateMode>().map_err(anyhow::Error::msg)?)
    };
    let mode_of = |task: &Option<String>| -> TemplateMode {
        fixed_mode.unwrap_or_else(|| {
            task.as_deref().and_then(TemplateMode::for_task).unwrap_or(TemplateMode::Generic)
        })
    };

    let client = build_client(&config, &config.synthesis.engine)?;

    // Batch per mode, then stitch results back into input order by id.
    let order: Vec<&String> = inputs.iter().map(|(id, _, _)| id).collect();
    let mut by_id: BTreeMap<String, SynthesizedQA> = BTreeMap::new();
    let mut failures: Vec<SynthesisFailure> = Vec::new();
    let mut audit = Vec::new();
    for mode in [
        TemplateMode::Generic,
        TemplateMode::Summary,
        TemplateMode::MultiHop,
        TemplateMode::SingleHop,
    ] {
        let group: Vec<(String, String)> = inputs
            .iter()
            .filter(|(_, _, task)| mode_of(task) == mode)
            .map(|(id, text, _)| (id.clone(), text.clone()))
            .collect();
        if group.is_empty() {
            continue;
        }
        match synthesize_instructions(
            &group,
            &client,
            &config.synthesis.engine,
            mode,
            config.synthesis.max_in_flight,
        ) {
            Ok(outcome) => {
                for rec in outcome.records {
                    by_id.insert(rec.context_id.clone(), rec);
                }
                failures.extend(outcome.failures);
                audit.extend(outcome.audit);
            }
            Err(e) => failures.extend(group.into_iter().map(|(id, _)| SynthesisFailure {
                id,
                error: e.to_string(),
            })),
        }
    }
    let records: Vec<&SynthesizedQA> = order.iter().filter_map(|id| by_id.get(*id)).collect();
    anyhow::ensure!(!records.is_empty(), "all {} synthesis requests failed", inputs.len());

    let head = header(&config, Some(config.synthesis.sample_seed));
    let out = out_path(&config, "synthesized_qa.jsonl")?;
    write_rows(&out, &head, &records)?;
    write_rows(&out_path(&config, "synth_instruction_failures.jsonl")?, &head, &failures)?;
    write_rows(&out_path(&config, "synth_instruction_audit.jsonl")?, &head, &audit)?;

    if !failures.is_empty() {
        eprintln!("warning: {} of {} contexts failed synthesis", failures.len(), inputs.len());
    }
    println!("wrote {} question-answer pairs to {}", records.len(), out.display());
    Ok(())
}

fn write_rows<T: serde::Serialize>(
    path: &std::path::Path,
    head: &ctxsynth::record::FileHeader,
    rows: &[T],
) -> anyhow::Result<()> {
    let mut writer = JsonlWriter::create(path, Some(head))?;
    for row in rows {
        writer.write(row)?;
    }
    writer.finish().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
