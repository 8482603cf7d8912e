//! Synthesis toolkit for long-context instruction tuning data.
//!
//! The pipeline starts from short instruction-answer pairs, asks an LLM
//! engine to write the missing background context for each pair, composes
//! the synthesized contexts into long multi-document training samples, and
//! packs those samples into fixed-length sequences with per-token loss
//! weights. Needle-in-a-haystack generators produce pilot and evaluation
//! data for length control, and reference scorers (exact match, token F1,
//! Rouge-L) close the data-quality loop via context-free ablation gaps.

pub mod compose;
pub mod corpus;
pub mod engine;
pub mod filler;
pub mod hash;
pub mod niah;
pub mod packing;
pub mod record;
pub mod scoring;
pub mod synthesis;

pub use compose::{ComposedSample, LengthDistribution, PromptLayout, TrainingRecord};
pub use corpus::{FieldMap, HaystackCorpus, InstructionPair};
pub use engine::{
    AuditEntry, ChatRequest, ChatResponse, EngineClient, EngineError, EngineSpec, MockBehavior,
    MockRule, RetryPolicy,
};
pub use niah::{DepthPolicy, Needle, NeedleLedger, NiahConfig, NiahSample, NiahVariant, PilotLevel};
pub use packing::{PackItem, PackOutcome, PackedSegment, PackedSequence, TokenCounter};
pub use record::FileHeader;
pub use scoring::{GapReport, GapRow, Metric, SampleScore, ScoreReport};
pub use synthesis::{ContextRecord, SynthesizedQA, TemplateMode};
