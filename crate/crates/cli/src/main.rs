//! Command-line front end for the long-context synthesis pipeline.
//!
//! Each subcommand runs one pipeline stage over line-delimited JSON files:
//! context synthesis, the QA-synthesis baseline, context composition,
//! needle-in-a-haystack generation, sequence packing, scoring, gap
//! reporting, and length statistics. Inputs are never mutated; outputs are
//! written atomically with a header recording config hash, seed, and tool
//! version.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::PipelineConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ctxsynth", version, about = "Long-context instruction data synthesis toolkit")]
struct Cli {
    /// TOML pipeline config; defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize background contexts for instruction-answer pairs.
    SynthContext {
        /// Engine id from the config's engine table.
        #[arg(long)]
        engine: Option<String>,
        /// Approximate context length in words.
        #[arg(long)]
        target_words: Option<usize>,
        #[arg(long)]
        max_in_flight: Option<usize>,
        /// Keep this many pairs per task (seeded subsample); 0 keeps all.
        #[arg(long)]
        n_per_task: Option<usize>,
    },
    /// Synthesize question-answer pairs from contexts (baseline direction).
    SynthInstruction {
        #[arg(long)]
        engine: Option<String>,
        /// generic, summary, multi_hop, single_hop, or auto (per-task).
        #[arg(long)]
        mode: Option<String>,
        /// Context records to question; defaults to the pairs file's
        /// source_context fields.
        #[arg(long, value_name = "FILE")]
        contexts: Option<PathBuf>,
        #[arg(long)]
        max_in_flight: Option<usize>,
    },
    /// Concatenate each context with distractors drawn from the pool.
    Compose {
        /// Context records; defaults to <output_dir>/contexts.jsonl.
        #[arg(long, value_name = "FILE")]
        contexts: Option<PathBuf>,
        /// Total contexts per sample (1, 5, and 10 are the standard sizes).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Emit instruction-only twins instead of composed prompts.
        #[arg(long)]
        context_free: bool,
        /// Restrict distractors to contexts from the same task.
        #[arg(long)]
        same_task_only: bool,
    },
    /// Generate needle-in-a-haystack datasets.
    GenNiah {
        /// Pilot preset: sft2 (needles only), sft3 (1k), or sft4 (64k).
        #[arg(long, conflicts_with = "test_suite")]
        preset: Option<String>,
        /// Evaluation grid over the configured lengths instead.
        #[arg(long)]
        test_suite: bool,
        /// single, multi_key, multi_query, or multi_value.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        target_tokens: Option<usize>,
        #[arg(long)]
        n_keys: Option<usize>,
        #[arg(long)]
        n_queries: Option<usize>,
        #[arg(long)]
        n_values: Option<usize>,
        /// Fixed depth fractions, e.g. 0.25,0.5,0.75; empty = uniform.
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        counter: Option<String>,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        per_subtask: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long)]
        n_per_length: Option<usize>,
        /// Needle ledger to extend; new needles avoid everything in it.
        #[arg(long, value_name = "FILE")]
        exclude_ledger: Option<PathBuf>,
    },
    /// Pack composed records into fixed-length training sequences.
    Pack {
        /// Composed samples; defaults to <output_dir>/composed.jsonl.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
        /// Sequence capacity in tokens (32768 and 65536 are the standard sizes).
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        counter: Option<String>,
    },
    /// Score predictions against gold answers.
    Score {
        #[arg(long, value_name = "FILE")]
        predictions: PathBuf,
        #[arg(long, value_name = "FILE")]
        gold: PathBuf,
        /// em, f1, or rouge_l.
        #[arg(long)]
        metric: String,
        /// Output base name; defaults to score_<metric>.
        #[arg(long)]
        output: Option<String>,
    },
    /// Compare context-included and context-free score reports.
    Gap {
        /// Report from the context-included run.
        #[arg(long, value_name = "FILE")]
        included: PathBuf,
        /// Report from the context-free run.
        #[arg(long, value_name = "FILE")]
        free: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Token-length distribution of a JSONL text field.
    Stats {
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        #[arg(long, default_value = "context_text")]
        field: String,
        #[arg(long)]
        counter: Option<String>,
        /// Output base name; defaults to stats.
        #[arg(long)]
        output: Option<String>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(dir) = cli.output_dir {
        config.paths.output_dir = dir;
    }
    match cli.command {
        Command::SynthContext { engine, target_words, max_in_flight, n_per_task } => {
            commands::synth::synth_context(config, engine, target_words, max_in_flight, n_per_task)
        }
        Command::SynthInstruction { engine, mode, contexts, max_in_flight } => {
            commands::synth::synth_instruction(config, engine, mode, contexts, max_in_flight)
        }
        Command::Compose { contexts, n, seed, context_free, same_task_only } => {
            commands::compose::compose(config, contexts, n, seed, context_free, same_task_only)
        }
        Command::GenNiah {
            preset,
            test_suite,
            variant,
            target_tokens,
            n_keys,
            n_queries,
            n_values,
            depths,
            seed,
            counter,
            n_samples,
            per_subtask,
            lengths,
            n_per_length,
            exclude_ledger,
        } => commands::gen_niah::gen_niah(
            config,
            commands::gen_niah::GenNiahArgs {
                preset,
                test_suite,
                variant,
                target_tokens,
                n_keys,
                n_queries,
                n_values,
                depths,
                seed,
                counter,
                n_samples,
                per_subtask,
                lengths,
                n_per_length,
                exclude_ledger,
            },
        ),
        Command::Pack { input, max_len, counter } => {
            commands::pack::pack(config, input, max_len, counter)
        }
        Command::Score { predictions, gold, metric, output } => {
            commands::score::score(config, predictions, gold, metric, output)
        }
        Command::Gap { included, free, threshold } => {
            commands::score::gap(config, included, free, threshold)
        }
        Command::Stats { input, field, counter, output } => {
            commands::stats::stats(config, input, field, counter, output)
        }
    }
}
