//! Subcommand implementations and the plumbing they share.

pub mod compose;
pub mod gen_niah;
pub mod pack;
pub mod score;
pub mod stats;
pub mod synth;

use crate::config::PipelineConfig;
use anyhow::Context;
use ctxsynth::packing::{counter_by_name, TokenCounter};
use ctxsynth::record::FileHeader;
use std::path::PathBuf;

/// Resolves a file name inside the output directory, creating the
/// directory on first use.
pub fn out_path(config: &PipelineConfig, name: &str) -> anyhow::Result<PathBuf> {
    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir.join(name))
}

/// Header stamped into every output file.
pub fn header(config: &PipelineConfig, seed: Option<u64>) -> FileHeader {
    FileHeader::new(config.config_hash(), seed, env!("CARGO_PKG_VERSION"))
}

pub fn counter(name: &str) -> anyhow::Result<Box<dyn TokenCounter>> {
    counter_by_name(name)
        .ok_or_else(|| anyhow::anyhow!("unknown token counter `{name}` (expected whitespace or chars4)"))
}
