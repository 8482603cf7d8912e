//! Prompt construction and response parsing for context and QA synthesis.
//!
//! The templates live in `templates/` and are embedded verbatim; rendering
//! is literal placeholder substitution with no escaping. Context synthesis
//! turns an instruction-answer pair into a request for its missing
//! background passage; instruction synthesis is the reverse baseline,
//! producing a question-answer pair from a given context.

use crate::corpus::InstructionPair;
use crate::engine::{AuditEntry, ChatRequest, EngineClient};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// System prompt for context synthesis.
pub const CONTEXT_SYSTEM_PROMPT: &str = include_str!("../templates/context_system.txt");
/// User template for context synthesis; placeholders `<instruction>`,
/// `<answer>`, `<target_words>`.
pub const CONTEXT_USER_TEMPLATE: &str = include_str!("../templates/context_user.txt");
/// Shared system prompt for QA synthesis.
pub const QA_SYSTEM_PROMPT: &str = include_str!("../templates/qa_system.txt");

const QA_USER_GENERIC: &str = include_str!("../templates/qa_user_generic.txt");
const QA_USER_SUMMARY: &str = include_str!("../templates/qa_user_summary.txt");
const QA_USER_MULTI_HOP: &str = include_str!("../templates/qa_user_multi_hop.txt");
const QA_USER_SINGLE_HOP: &str = include_str!("../templates/qa_user_single_hop.txt");

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("response contains no context text")]
    EmptyContext,
    #[error("response is missing the `{0}` marker")]
    MissingMarker(&'static str),
    #[error("response has an empty {0} after its marker")]
    EmptyField(&'static str),
    #[error("no input records to synthesize from")]
    NoInput,
    #[error("all {0} synthesis requests failed")]
    AllFailed(usize),
}

/// Which QA-synthesis template to use. `Generic` is task-agnostic; the
/// others constrain the question style per task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    Generic,
    Summary,
    MultiHop,
    SingleHop,
}

impl TemplateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateMode::Generic => "generic",
            TemplateMode::Summary => "summary",
            TemplateMode::MultiHop => "multi_hop",
            TemplateMode::SingleHop => "single_hop",
        }
    }

    fn user_template(self) -> &'static str {
        match self {
            TemplateMode::Generic => QA_USER_GENERIC,
            TemplateMode::Summary => QA_USER_SUMMARY,
            TemplateMode::MultiHop => QA_USER_MULTI_HOP,
            TemplateMode::SingleHop => QA_USER_SINGLE_HOP,
        }
    }

    /// Task-family mapping for the constrained templates: summarization
    /// tasks get `Summary`, multi-document QA gets `MultiHop`,
    /// single-document QA gets `SingleHop`.
    pub fn for_task(task: &str) -> Option<TemplateMode> {
        let key: String = task.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        match key.as_str() {
            "govreport" | "multinews" | "qmsum" => Some(TemplateMode::Summary),
            "2wikimultihopqa" | "2wikimqa" | "hotpotqa" | "musique" => Some(TemplateMode::MultiHop),
            "narrativeqa" | "qasper" => Some(TemplateMode::SingleHop),
            _ => None,
        }
    }
}

impl std::str::FromStr for TemplateMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generic" => Ok(TemplateMode::Generic),
            "summary" => Ok(TemplateMode::Summary),
            "multi_hop" => Ok(TemplateMode::MultiHop),
            "single_hop" => Ok(TemplateMode::SingleHop),
            other => Err(format!(
                "unknown template mode `{other}` (expected generic, summary, multi_hop, or single_hop)"
            )),
        }
    }
}

/// Renders a word count with thousands separators, as the template expects
/// ("2,000").
pub fn format_word_target(words: usize) -> String {
    let digits = words.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Builds the context-synthesis request for one pair. Substitution is
/// literal; the prompt hash is a pure function of the pair and target.
pub fn build_context_prompt(pair: &InstructionPair, target_words: usize, engine_id: &str) -> ChatRequest {
    let user = CONTEXT_USER_TEMPLATE
        .replace("<instruction>", &pair.instruction)
        .replace("<answer>", &pair.answer)
        .replace("<target_words>", &format_word_target(target_words));
    ChatRequest::new(CONTEXT_SYSTEM_PROMPT, user, engine_id)
}

/// Builds the QA-synthesis request for one context.
pub fn build_instruction_prompt(context_text: &str, mode: TemplateMode, engine_id: &str) -> ChatRequest {
    let user = mode.user_template().replace("<context>", context_text);
    ChatRequest::new(QA_SYSTEM_PROMPT, user, engine_id)
}

/// A parsed context body; `labeled` is false when the response ignored the
/// "Context:" format instruction and was passed through as-is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedContext {
    pub text: String,
    pub labeled: bool,
}

/// Strips the leading "Context:" label and trims; unlabeled responses pass
/// through unchanged with a warning flag. Empty remainders are errors.
pub fn parse_context_response(text: &str) -> Result<ParsedContext, SynthesisError> {
    let (body, labeled) = match text.strip_prefix("Context:") {
        Some(rest) => (rest.trim().to_string(), true),
        None => (text.to_string(), false),
    };
    if body.trim().is_empty() {
        return Err(SynthesisError::EmptyContext);
    }
    Ok(ParsedContext { text: body, labeled })
}

/// Splits a QA response on the first "Question:" and the first "Answer:"
/// after it; both parts are trimmed. Errors name the missing marker.
pub fn parse_qa_response(text: &str) -> Result<(String, String), SynthesisError> {
    let q_start = text.find("Question:").ok_or(SynthesisError::MissingMarker("Question:"))?;
    let after_q = &text[q_start + "Question:".len()..];
    let a_start = after_q.find("Answer:").ok_or(SynthesisError::MissingMarker("Answer:"))?;
    let question = after_q[..a_start].trim();
    let answer = after_q[a_start + "Answer:".len()..].trim();
    if question.is_empty() {
        return Err(SynthesisError::EmptyField("question"));
    }
    if answer.is_empty() {
        return Err(SynthesisError::EmptyField("answer"));
    }
    Ok((question.to_string(), answer.to_string()))
}

/// One synthesized context, label-stripped and word-counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub pair_id: String,
    pub text: String,
    pub engine_id: String,
    pub prompt_hash: String,
    /// Whitespace word count of `text`.
    pub word_count: usize,
    pub target_words: usize,
}

/// One synthesized question-answer pair (instruction-synthesis baseline).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesizedQA {
    pub context_id: String,
    pub question: String,
    pub answer: String,
    pub template_mode: TemplateMode,
}

/// A per-input failure kept alongside the successes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisFailure {
    pub id: String,
    pub error: String,
}

/// Batch result: parsed records in input order, failures logged by id, and
/// audit entries for every request made.
#[derive(Debug)]
pub struct SynthesisOutcome<T> {
    pub records: Vec<T>,
    pub failures: Vec<SynthesisFailure>,
    pub audit: Vec<AuditEntry>,
    /// Responses that lacked the expected label but were still usable.
    pub unlabeled: usize,
}

/// Synthesizes a context for every pair. Per-pair failures (engine or
/// parse) are collected, not fatal, unless every request fails.
pub fn synthesize_contexts(
    pairs: &[InstructionPair],
    client: &EngineClient,
    engine_id: &str,
    target_words: usize,
    max_in_flight: usize,
) -> Result<SynthesisOutcome<ContextRecord>, SynthesisError> {
    if pairs.is_empty() {
        return Err(SynthesisError::NoInput);
    }
    let requests: Vec<ChatRequest> = pairs
        .iter()
        .map(|p| build_context_prompt(p, target_words, engine_id))
        .collect();
    let results = client.complete_batch(&requests, max_in_flight);
    let mut outcome = SynthesisOutcome {
        records: Vec::new(),
        failures: Vec::new(),
        audit: Vec::new(),
        unlabeled: 0,
    };
    for ((pair, request), result) in pairs.iter().zip(&requests).zip(&results) {
        outcome.audit.push(AuditEntry::from_result(request, result));
        let parsed = match result {
            Ok(response) => parse_context_response(&response.text),
            Err(e) => {
                outcome.failures.push(SynthesisFailure {
                    id: pair.id.clone(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        match parsed {
            Ok(ctx) => {
                if !ctx.labeled {
                    outcome.unlabeled += 1;
                }
                outcome.records.push(ContextRecord {
                    pair_id: pair.id.clone(),
                    word_count: ctx.text.split_whitespace().count(),
                    text: ctx.text,
                    engine_id: engine_id.to_string(),
                    prompt_hash: request.prompt_hash(),
                    target_words,
                });
            }
            Err(e) => outcome.failures.push(SynthesisFailure {
                id: pair.id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if outcome.records.is_empty() {
        return Err(SynthesisError::AllFailed(pairs.len()));
    }
    Ok(outcome)
}

/// Synthesizes a question-answer pair for every (context_id, text) input.
pub fn synthesize_instructions(
    contexts: &[(String, String)],
    client: &EngineClient,
    engine_id: &str,
    mode: TemplateMode,
    max_in_flight: usize,
) -> Result<SynthesisOutcome<SynthesizedQA>, SynthesisError> {
    if contexts.is_empty() {
        return Err(SynthesisError::NoInput);
    }
    let requests: Vec<ChatRequest> = contexts
        .iter()
        .map(|(_, text)| build_instruction_prompt(text, mode, engine_id))
        .collect();
    let results = client.complete_batch(&requests, max_in_flight);
    let mut outcome = SynthesisOutcome {
        records: Vec::new(),
        failures: Vec::new(),
        audit: Vec::new(),
        unlabeled: 0,
    };
    for (((context_id, _), request), result) in contexts.iter().zip(&requests).zip(&results) {
        outcome.audit.push(AuditEntry::from_result(request, result));
        let parsed = match result {
            Ok(response) => parse_qa_response(&response.text),
            Err(e) => {
                outcome.failures.push(SynthesisFailure {
                    id: context_id.clone(),
                    error: e.to_string(),
                });
                continue;
            }
        };
        match parsed {
            Ok((question, answer)) => outcome.records.push(SynthesizedQA {
                context_id: context_id.clone(),
                question,
                answer,
                template_mode: mode,
            }),
            Err(e) => outcome.failures.push(SynthesisFailure {
                id: context_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    if outcome.records.is_empty() {
        return Err(SynthesisError::AllFailed(contexts.len()));
    }
    Ok(outcome)
}
