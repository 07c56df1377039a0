//! Evaluation record shapes, their validation rules, and the inference
//! prompt template.
//!
//! Decoding from JSONL happens in the `sotana` crate; the functions here take
//! already-decoded records (or per-line decode errors) and apply the
//! filtering contracts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::microlm::tokenizer::token_len;

/// Placeholder left in Stack Overflow dumps where code or images were cut.
pub const BIGBLOCK: &str = "BIGBLOCK";

pub const DEFAULT_MAX_PROMPT_TOKENS: usize = 512;
pub const PROMPT_HEADER: &str = "Complete the request below.\n\n";
pub const INSTRUCTION_MARKER: &str = "### Instruction:\n";
pub const INPUT_MARKER: &str = "\n\n### Input:\n";
pub const RESPONSE_MARKER: &str = "\n\n### Response:\n";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("instruction must not be empty")]
    EmptyInstruction,
    #[error("prompt template needs {needed} tokens before any input, limit is {max}")]
    PromptTooLong { needed: usize, max: usize },
    #[error("duplicate task_id {0:?}")]
    DuplicateTaskId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoQuestion {
    pub id: String,
    pub title: String,
    pub body: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizationPair {
    pub code: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodegenTask {
    pub task_id: String,
    pub prompt: String,
    pub tests: String,
    pub entry_point: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferencePrompt {
    pub rendered: String,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Some text field carries the `BIGBLOCK` placeholder.
    Bigblock,
    /// A required field is empty after trimming.
    EmptyField,
    /// The line could not be decoded into the record shape.
    Malformed,
}

/// A record-level problem, kept so runs stay auditable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: ExclusionReason,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub loaded: usize,
    pub excluded: BTreeMap<ExclusionReason, usize>,
    pub errors: Vec<RecordError>,
}

impl ExclusionReport {
    pub fn total_excluded(&self) -> usize {
        self.excluded.values().sum()
    }

    pub fn count(&self, reason: ExclusionReason) -> usize {
        self.excluded.get(&reason).copied().unwrap_or(0)
    }

    fn exclude(&mut self, line: usize, reason: ExclusionReason, message: String) {
        *self.excluded.entry(reason).or_insert(0) += 1;
        self.errors.push(RecordError { line, reason, message });
    }
}

impl SoQuestion {
    pub fn check(&self) -> Result<(), ExclusionReason> {
        if self.title.trim().is_empty() || self.body.trim().is_empty() {
            return Err(ExclusionReason::EmptyField);
        }
        // Stricter than filtering the body alone: answers are scanned too.
        if [&self.title, &self.body, &self.answer]
            .iter()
            .any(|f| f.contains(BIGBLOCK))
        {
            return Err(ExclusionReason::Bigblock);
        }
        Ok(())
    }
}

impl SummarizationPair {
    pub fn is_valid(&self) -> bool {
        !self.code.trim().is_empty() && !self.summary.trim().is_empty()
    }
}

impl CodegenTask {
    pub fn is_valid(&self) -> bool {
        !self.task_id.is_empty() && !self.tests.trim().is_empty()
    }
}

/// Line-numbered decode results, as produced by a JSONL reader. `Err`
/// carries the decoder's message.
pub type Decoded<T> = (usize, Result<T, String>);

pub fn filter_so_questions<I>(records: I) -> (Vec<SoQuestion>, ExclusionReport)
where
    I: IntoIterator<Item = Decoded<SoQuestion>>,
{
    let mut report = ExclusionReport::default();
    let mut out = Vec::new();
    for (line, rec) in records {
        match rec {
            Err(msg) => report.exclude(line, ExclusionReason::Malformed, msg),
            Ok(q) => match q.check() {
                Ok(()) => out.push(q),
                Err(reason) => report.exclude(line, reason, q.id.clone()),
            },
        }
    }
    report.loaded = out.len();
    (out, report)
}

/// First `limit` valid pairs in input order; invalid ones are skipped and
/// counted in the report.
pub fn take_summaries<I>(records: I, limit: usize) -> (Vec<SummarizationPair>, ExclusionReport)
where
    I: IntoIterator<Item = Decoded<SummarizationPair>>,
{
    let mut report = ExclusionReport::default();
    let mut out = Vec::new();
    if limit == 0 {
        return (out, report);
    }
    for (line, rec) in records {
        match rec {
            Err(msg) => report.exclude(line, ExclusionReason::Malformed, msg),
            Ok(p) if !p.is_valid() => {
                report.exclude(line, ExclusionReason::EmptyField, String::from("empty code or summary"))
            }
            Ok(p) => {
                out.push(p);
                if out.len() == limit {
                    break;
                }
            }
        }
    }
    report.loaded = out.len();
    (out, report)
}

/// All valid tasks; a repeated `task_id` is fatal.
pub fn collect_codegen_tasks<I>(records: I) -> Result<(Vec<CodegenTask>, ExclusionReport), CorpusError>
where
    I: IntoIterator<Item = Decoded<CodegenTask>>,
{
    let mut report = ExclusionReport::default();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, rec) in records {
        match rec {
            Err(msg) => report.exclude(line, ExclusionReason::Malformed, msg),
            Ok(t) if !t.is_valid() => {
                report.exclude(line, ExclusionReason::EmptyField, t.task_id.clone())
            }
            Ok(t) => {
                if !seen.insert(t.task_id.clone()) {
                    return Err(CorpusError::DuplicateTaskId(t.task_id));
                }
                out.push(t);
            }
        }
    }
    report.loaded = out.len();
    Ok((out, report))
}

/// Instruction/input/response template with a token budget measured by
/// the byte-level model tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub max_tokens: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self { max_tokens: DEFAULT_MAX_PROMPT_TOKENS }
    }
}

impl PromptTemplate {
    pub fn new(max_tokens: usize) -> Self {
        Self { max_tokens }
    }

    /// Renders the template; an over-long input is cut from the right so the
    /// whole prompt fits `max_tokens`. The instruction is never cut.
    pub fn render(&self, source_id: &str, instruction: &str, input: &str) -> Result<InferencePrompt, CorpusError> {
        if instruction.trim().is_empty() {
            return Err(CorpusError::EmptyInstruction);
        }
        let mut fixed = token_len(PROMPT_HEADER)
            + token_len(INSTRUCTION_MARKER)
            + token_len(instruction)
            + token_len(RESPONSE_MARKER);
        if !input.is_empty() {
            fixed += token_len(INPUT_MARKER);
        }
        if fixed > self.max_tokens {
            return Err(CorpusError::PromptTooLong { needed: fixed, max: self.max_tokens });
        }
        let has_input = !input.is_empty();
        let input = truncate_to_tokens(input, self.max_tokens - fixed);

        let mut rendered = String::with_capacity(fixed + input.len());
        rendered.push_str(PROMPT_HEADER);
        rendered.push_str(INSTRUCTION_MARKER);
        rendered.push_str(instruction);
        // The section stays even if truncation emptied it.
        if has_input {
            rendered.push_str(INPUT_MARKER);
            rendered.push_str(input);
        }
        rendered.push_str(RESPONSE_MARKER);
        Ok(InferencePrompt { rendered, source_id: String::from(source_id) })
    }
}

/// Render with the default 512-token budget and no source id.
pub fn render_prompt(instruction: &str, input: &str) -> Result<InferencePrompt, CorpusError> {
    PromptTemplate::default().render("", instruction, input)
}

/// Longest prefix of `text` whose token length is at most `budget`, cut on
/// a character boundary.
fn truncate_to_tokens(text: &str, budget: usize) -> &str {
    if token_len(text) <= budget {
        return text;
    }
    let mut used = 0;
    let mut end = 0;
    for (i, ch) in text.char_indices() {
        let w = if ch == '\0' { 0 } else { ch.len_utf8() };
        if used + w > budget {
            break;
        }
        used += w;
        end = i + ch.len_utf8();
    }
    &text[..end]
}
