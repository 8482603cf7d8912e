//! Declarative pipeline configuration. One TOML document configures every
//! stage; command-line flags override individual fields, and the hash of
//! the effective config is stamped into every output header.

use anyhow::Context;
use ctxsynth::compose::PromptLayout;
use ctxsynth::corpus::FieldMap;
use ctxsynth::engine::{EngineSpec, RetryPolicy};
use ctxsynth::hash;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Engines by id; credentials come from the environment, never from here.
    pub engines: BTreeMap<String, EngineSpec>,
    pub retry: RetryPolicy,
    pub paths: PathsConfig,
    /// Field names in the pairs file, for corpora with foreign schemas.
    pub fields: FieldMap,
    pub synthesis: SynthesisConfig,
    pub composition: CompositionConfig,
    pub niah: NiahConfigSection,
    pub packing: PackingConfig,
    pub scoring: ScoringConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub pairs: PathBuf,
    pub haystack_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            pairs: "pairs.jsonl".into(),
            haystack_dir: "haystack".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub engine: String,
    pub target_words: usize,
    /// generic, summary, multi_hop, single_hop, or auto (per-task).
    pub mode: String,
    pub max_in_flight: usize,
    /// Pairs kept per task before synthesis; 0 keeps everything.
    pub n_per_task: usize,
    pub sample_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            engine: "default".into(),
            target_words: 2000,
            mode: "generic".into(),
            max_in_flight: 4,
            n_per_task: 0,
            sample_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositionConfig {
    /// Concatenated contexts per sample (1 = no distractors).
    pub n: usize,
    pub seed: u64,
    /// Restrict distractors to contexts from the same task.
    pub same_task_only: bool,
    pub layout: PromptLayout,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            n: 10,
            seed: 42,
            same_task_only: false,
            layout: PromptLayout::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NiahConfigSection {
    pub variant: String,
    pub target_tokens: usize,
    pub n_keys: usize,
    pub n_queries: usize,
    pub n_values: usize,
    /// Fixed depth fractions cycled over needles; empty = uniform random.
    pub depths: Vec<f64>,
    pub seed: u64,
    pub counter: String,
    /// Custom-mode sample count.
    pub n_samples: usize,
    /// Pilot-mode samples per variant (4 variants per level).
    pub per_subtask: usize,
    /// Test-suite context lengths in tokens.
    pub lengths: Vec<usize>,
    pub n_per_length: usize,
}

impl Default for NiahConfigSection {
    fn default() -> Self {
        NiahConfigSection {
            variant: "single".into(),
            target_tokens: 1000,
            n_keys: 32,
            n_queries: 4,
            n_values: 4,
            depths: Vec::new(),
            seed: 42,
            counter: "whitespace".into(),
            n_samples: 100,
            per_subtask: 200,
            lengths: vec![1000, 4000, 16000],
            n_per_length: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackingConfig {
    pub max_len: usize,
    pub counter: String,
}

impl Default for PackingConfig {
    fn default() -> Self {
        PackingConfig { max_len: 65536, counter: "whitespace".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    /// Score-point gap at or under which a task is flagged low-coherence.
    pub gap_threshold: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig { gap_threshold: 1.0 }
    }
}

impl PipelineConfig {
    /// Loads the TOML file, or the all-defaults config when none is given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<PipelineConfig> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
            None => Ok(PipelineConfig::default()),
        }
    }

    /// Stable hash of the effective configuration (after flag overrides).
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hash::short_hash(&[canonical.as_bytes()])
    }
}
