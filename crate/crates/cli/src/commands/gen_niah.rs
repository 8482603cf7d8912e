//! Needle-in-a-haystack generation: pilot presets, evaluation grids, and
//! fully custom configurations, with a needle ledger for split hygiene.

use super::{counter, header, out_path};
use crate::config::PipelineConfig;
use anyhow::Context;
use ctxsynth::corpus::load_haystack;
use ctxsynth::hash;
use ctxsynth::niah::{
    gen_pilot_dataset, gen_test_suite, generate, DepthPolicy, NeedleLedger, NiahConfig,
    NiahVariant, PilotLevel,
};
use ctxsynth::record::{write_text, JsonlWriter};
use std::path::PathBuf;

pub struct GenNiahArgs {
    pub preset: Option<String>,
    pub test_suite: bool,
    pub variant: Option<String>,
    pub target_tokens: Option<usize>,
    pub n_keys: Option<usize>,
    pub n_queries: Option<usize>,
    pub n_values: Option<usize>,
    pub depths: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub counter: Option<String>,
    pub n_samples: Option<usize>,
    pub per_subtask: Option<usize>,
    pub lengths: Option<Vec<usize>>,
    pub n_per_length: Option<usize>,
    pub exclude_ledger: Option<PathBuf>,
}

pub fn gen_niah(mut config: PipelineConfig, args: GenNiahArgs) -> anyhow::Result<()> {
    let section = &mut config.niah;
    if let Some(v) = args.variant {
        section.variant = v;
    }
    if let Some(v) = args.target_tokens {
        section.target_tokens = v;
    }
    if let Some(v) = args.n_keys {
        section.n_keys = v;
    }
    if let Some(v) = args.n_queries {
        section.n_queries = v;
    }
    if let Some(v) = args.n_values {
        section.n_values = v;
    }
    if let Some(v) = args.depths {
        section.depths = v;
    }
    if let Some(v) = args.seed {
        section.seed = v;
    }
    if let Some(v) = args.counter {
        section.counter = v;
    }
    if let Some(v) = args.n_samples {
        section.n_samples = v;
    }
    if let Some(v) = args.per_subtask {
        section.per_subtask = v;
    }
    if let Some(v) = args.lengths {
        section.lengths = v;
    }
    if let Some(v) = args.n_per_length {
        section.n_per_length = v;
    }

    let corpus = load_haystack(&config.paths.haystack_dir)?;
    let counter = counter(&config.niah.counter)?;
    let mut ledger = match &args.exclude_ledger {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading ledger {}", path.display()))?;
            serde_json::from_str::<NeedleLedger>(&text)
                .with_context(|| format!("parsing ledger {}", path.display()))?
        }
        None => NeedleLedger::new(),
    };
    let seed = config.niah.seed;

    let (samples, name) = if let Some(preset) = &args.preset {
        let level: PilotLevel = preset.parse().map_err(anyhow::Error::msg)?;
        let samples = gen_pilot_dataset(
            level,
            config.niah.per_subtask,
            &corpus,
            counter.as_ref(),
            seed,
            &mut ledger,
        )?;
        (samples, format!("niah_{}.jsonl", level.as_str()))
    } else if args.test_suite {
        let variant: NiahVariant = config.niah.variant.parse().map_err(anyhow::Error::msg)?;
        let samples = gen_test_suite(
            variant,
            &config.niah.lengths,
            config.niah.n_per_length,
            &corpus,
            counter.as_ref(),
            seed,
            &mut ledger,
        )?;
        (samples, "niah_test.jsonl".to_string())
    } else {
        let variant: NiahVariant = config.niah.variant.parse().map_err(anyhow::Error::msg)?;
        let depth_policy = if config.niah.depths.is_empty() {
            DepthPolicy::UniformRandom
        } else {
            DepthPolicy::Fixed(config.niah.depths.clone())
        };
        let mut samples = Vec::with_capacity(config.niah.n_samples);
        for i in 0..config.niah.n_samples {
            let id = format!("niah-{}-{:04}", variant.as_str(), i);
            let sample_config = NiahConfig {
                variant,
                target_tokens: config.niah.target_tokens,
                n_keys: config.niah.n_keys,
                n_queries: config.niah.n_queries,
                n_values: config.niah.n_values,
                depth_policy: depth_policy.clone(),
                seed: hash::derived_seed(seed, &id),
            };
            samples.push(generate(&id, &sample_config, &corpus, counter.as_ref(), &mut ledger)?);
        }
        (samples, "niah.jsonl".to_string())
    };

    let out = out_path(&config, &name)?;
    let mut writer = JsonlWriter::create(&out, Some(&header(&config, Some(seed))))?;
    for sample in &samples {
        writer.write(sample)?;
    }
    writer.finish()?;

    // The merged ledger chains into later runs via --exclude-ledger.
    let ledger_path = out_path(&config, "needle_ledger.json")?;
    let mut ledger_json = serde_json::to_string_pretty(&ledger)?;
    ledger_json.push('\n');
    write_text(&ledger_path, &ledger_json)?;

    println!(
        "wrote {} samples to {} ({} needles in {})",
        samples.len(),
        out.display(),
        ledger.len(),
        ledger_path.display()
    );
    Ok(())
}
