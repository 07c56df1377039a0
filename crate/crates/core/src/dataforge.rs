//! Self-instruct generation of software-engineering instruction data.
//!
//! The loop samples demonstrations from a [`SeedPool`], assembles the
//! generation prompt, asks a [`CompletionBackend`] to continue it, parses
//! the numbered blocks that come back and keeps the triples that pass
//! [`filter_triple`]. Transport retries belong to the backend implementation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, DetRng};

pub const NO_INPUT: &str = "<noinput>";
pub const DEMOS_PER_PROMPT: usize = 5;
pub const BOOTSTRAP_DEMOS: usize = 3;
pub const MIN_INSTRUCTION_WORDS: usize = 3;
pub const MIN_ASCII_ALPHA_RATIO: f64 = 0.9;

const TASK_DESCRIPTION: &str = "You are asked to come up with a set of diverse task instances in the \
domain of software engineering. These task instances will be given to a language model and we will \
evaluate the language model for completing them.\n\n";

const REQUIREMENTS: &str = "Here are the requirements:\n\
1. Try not to repeat the verb for each instruction to maximize diversity.\n\
2. The language used for the instruction also should be diverse. For example, you should combine \
questions with imperative instructions.\n\
3. The type of instructions should be diverse and related to software engineering, such as code \
summarization, code generation, code repair, bug localization, API recommendation, testing and \
question answering about programming.\n\
4. A language model should be able to complete the instruction. For example, do not ask the \
assistant to create any visual or audio output, and do not ask it to run code or access the internet.\n\
5. The instructions should be in English.\n\
6. The instructions should be 1 to 2 sentences long. Either an imperative sentence or a question is \
permitted.\n\
7. You should generate an appropriate input to the instruction. The input field should contain a \
specific example provided for the instruction, such as a code snippet, an error message or a short \
description. Not all instructions require input; in that case, simply put \"<noinput>\" in the input \
field.\n\
8. The output should be an appropriate response to the instruction and the input. Make sure the \
output is less than 200 words.\n\n";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Seed,
    Generated,
}

/// One (instruction, input, output) record. `input` is empty, never absent,
/// when the instruction needs none.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstructionTriple {
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    pub output: String,
    /// Not part of the dataset format; files written by the pipeline omit it.
    #[serde(default, skip_serializing)]
    pub origin: Origin,
}

impl InstructionTriple {
    pub fn new(instruction: &str, input: &str, output: &str, origin: Origin) -> Self {
        Self {
            instruction: instruction.to_string(),
            input: input.to_string(),
            output: output.to_string(),
            origin,
        }
    }

    fn key(&self) -> (String, String, String) {
        (self.instruction.clone(), self.input.clone(), self.output.clone())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForgeError {
    #[error("seed pool is empty")]
    EmptyPool,
    #[error("duplicate triple in seed pool at position {0}")]
    DuplicateSeed(usize),
    #[error("need {needed} distinct demonstrations, only {available} available")]
    NotEnoughDemos { needed: usize, available: usize },
    #[error("prompt needs exactly {expected} demonstrations, got {got}")]
    WrongDemoCount { expected: usize, got: usize },
    #[error("invalid forge config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("no scripted completion matches the prompt")]
    NoFixture,
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
}

impl BackendError {
    /// Transport failures are worth retrying; everything else is final.
    pub fn is_transient(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
}

/// Something that continues a prompt. `complete_batch` may run requests
/// concurrently but must return results in request order.
pub trait CompletionBackend {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, BackendError>;

    fn complete_batch(&mut self, requests: &[CompletionRequest]) -> Vec<Result<String, BackendError>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for &mut B {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }

    fn complete_batch(&mut self, requests: &[CompletionRequest]) -> Vec<Result<String, BackendError>> {
        (**self).complete_batch(requests)
    }
}

/// Seeds plus everything accepted so far. Exact duplicates are refused
/// across both lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedPool {
    seeds: Vec<InstructionTriple>,
    generated: Vec<InstructionTriple>,
    keys: BTreeSet<(String, String, String)>,
}

impl SeedPool {
    pub fn new(seeds: Vec<InstructionTriple>) -> Result<Self, ForgeError> {
        if seeds.is_empty() {
            return Err(ForgeError::EmptyPool);
        }
        let mut keys = BTreeSet::new();
        let mut normalized = Vec::with_capacity(seeds.len());
        for (i, mut s) in seeds.into_iter().enumerate() {
            if !keys.insert(s.key()) {
                return Err(ForgeError::DuplicateSeed(i));
            }
            s.origin = Origin::Seed;
            normalized.push(s);
        }
        Ok(Self { seeds: normalized, generated: Vec::new(), keys })
    }

    pub fn seeds(&self) -> &[InstructionTriple] {
        &self.seeds
    }

    pub fn generated(&self) -> &[InstructionTriple] {
        &self.generated
    }

    pub fn len(&self) -> usize {
        self.seeds.len() + self.generated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, t: &InstructionTriple) -> bool {
        self.keys.contains(&t.key())
    }

    /// Returns false (and keeps the pool unchanged) for a duplicate.
    pub fn push_generated(&mut self, mut t: InstructionTriple) -> bool {
        if !self.keys.insert(t.key()) {
            return false;
        }
        t.origin = Origin::Generated;
        self.generated.push(t);
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub target_count: usize,
    /// New instances asked for in each prompt.
    pub batch_completions: usize,
    pub seed_demos: usize,
    pub generated_demos: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub rng_seed: u64,
    /// Upper bound on backend queries for one run.
    pub max_queries: usize,
    /// Requests issued per round; results are committed in issue order.
    pub concurrency: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            target_count: 100,
            batch_completions: 5,
            seed_demos: 3,
            generated_demos: 2,
            temperature: 1.0,
            max_tokens: 3072,
            rng_seed: 0,
            max_queries: 1000,
            concurrency: 1,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<(), ForgeError> {
        if self.seed_demos != 3 || self.generated_demos != 2 {
            return Err(ForgeError::InvalidConfig("demonstrations are 3 seeds plus 2 generated"));
        }
        if self.batch_completions == 0 || self.concurrency == 0 {
            return Err(ForgeError::InvalidConfig("batch_completions and concurrency must be positive"));
        }
        if !(self.temperature >= 0.0) {
            return Err(ForgeError::InvalidConfig("temperature must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Format,
    NonEnglish,
    ShortInstruction,
    Duplicate,
}

impl RejectReason {
    pub const ALL: [RejectReason; 4] = [
        RejectReason::Format,
        RejectReason::NonEnglish,
        RejectReason::ShortInstruction,
        RejectReason::Duplicate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Format => "format",
            RejectReason::NonEnglish => "non_english",
            RejectReason::ShortInstruction => "short_instruction",
            RejectReason::Duplicate => "duplicate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub accepted: usize,
    pub rejected_by_reason: BTreeMap<RejectReason, usize>,
}

impl FilterReport {
    pub fn rejected(&self, reason: RejectReason) -> usize {
        self.rejected_by_reason.get(&reason).copied().unwrap_or(0)
    }

    pub fn total_rejected(&self) -> usize {
        self.rejected_by_reason.values().sum()
    }

    /// Every parsed candidate lands in exactly one bucket.
    pub fn total_candidates(&self) -> usize {
        self.accepted + self.total_rejected()
    }

    fn reject(&mut self, reason: RejectReason) {
        *self.rejected_by_reason.entry(reason).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutcome {
    pub dataset: Vec<InstructionTriple>,
    pub report: FilterReport,
    pub queries: usize,
    /// The query budget ran out before the target was reached.
    pub budget_exhausted: bool,
}

/// 3 seeds without replacement, then 2 generated; a generated shortfall is
/// filled from the seeds not already drawn.
pub fn sample_demonstrations(
    pool: &SeedPool,
    cfg: &ForgeConfig,
    rng: &mut DetRng,
) -> Result<Vec<InstructionTriple>, ForgeError> {
    let want_gen = cfg.generated_demos;
    let from_gen = want_gen.min(pool.generated.len());
    let from_seeds = cfg.seed_demos + (want_gen - from_gen);
    let needed = cfg.seed_demos + want_gen;
    if pool.seeds.len() < from_seeds {
        return Err(ForgeError::NotEnoughDemos { needed, available: pool.len() });
    }
    let mut demos: Vec<InstructionTriple> = index::sample(rng, pool.seeds.len(), from_seeds)
        .iter()
        .map(|i| pool.seeds[i].clone())
        .collect();
    if from_gen > 0 {
        let picked = index::sample(rng, pool.generated.len(), from_gen);
        // Generated demos go after the seed demos, shortfall fillers before them.
        demos.extend(picked.iter().map(|i| pool.generated[i].clone()));
    }
    Ok(demos)
}

/// The generation prompt over exactly five demonstrations.
pub fn assemble_prompt(demos: &[InstructionTriple]) -> Result<String, ForgeError> {
    if demos.len() != DEMOS_PER_PROMPT {
        return Err(ForgeError::WrongDemoCount { expected: DEMOS_PER_PROMPT, got: demos.len() });
    }
    Ok(render_prompt(demos))
}

/// Same template for any number of demonstrations (bootstrap uses three).
pub fn render_prompt(demos: &[InstructionTriple]) -> String {
    let mut out = String::with_capacity(4096);
    out.push_str(TASK_DESCRIPTION);
    out.push_str(REQUIREMENTS);
    out.push_str("List of tasks:\n\n");
    for (i, d) in demos.iter().enumerate() {
        let input = if d.input.trim().is_empty() { NO_INPUT } else { d.input.as_str() };
        let _ = write!(
            out,
            "{}. Instruction: {}\nInput: {}\nOutput: {}\n\n",
            i + 1,
            d.instruction,
            input,
            d.output
        );
    }
    out.push_str(&continuation_cue(demos.len() + 1));
    out
}

fn continuation_cue(n: usize) -> String {
    format!("{n}. Instruction:")
}

/// Restores the cue the backend continued from, unless the completion
/// already starts with a numbered block of its own.
pub fn complete_with_cue(prompt: &str, completion: &str) -> String {
    if block_header(completion.trim_start().lines().next().unwrap_or("")).is_some() {
        return completion.to_string();
    }
    let cue = prompt.rsplit("\n\n").next().unwrap_or("");
    format!("{cue}{completion}")
}

/// Strips a leading `N.` or `N)` list number.
fn strip_number(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &t[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    Some(rest.trim_start())
}

/// Text after `N. Instruction:` when the line opens a block.
fn block_header(line: &str) -> Option<&str> {
    strip_number(line)?.strip_prefix("Instruction:")
}

fn field_header<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let t = line.trim_start();
    t.strip_prefix(name).or_else(|| strip_number(t).and_then(|r| r.strip_prefix(name)))
}

/// Every numbered block in `raw`, parsed or marked malformed. Text before
/// the first block header is ignored.
pub fn parse_blocks(raw: &str) -> Vec<Result<InstructionTriple, ()>> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    for line in raw.lines() {
        if block_header(line).is_some() {
            blocks.push(Vec::new());
        }
        if let Some(b) = blocks.last_mut() {
            b.push(line);
        }
    }
    blocks.iter().map(|lines| parse_block(lines)).collect()
}

fn parse_block(lines: &[&str]) -> Result<InstructionTriple, ()> {
    #[derive(PartialEq)]
    enum Field {
        Instruction,
        Input,
        Output,
    }
    let mut field = Field::Instruction;
    let mut parts: [Vec<&str>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, line) in lines.iter().enumerate() {
        if i == 0 {
            parts[0].push(block_header(line).ok_or(())?);
            continue;
        }
        if field == Field::Instruction {
            if let Some(rest) = field_header(line, "Input:") {
                field = Field::Input;
                parts[1].push(rest);
                continue;
            }
        } else if field == Field::Input {
            if let Some(rest) = field_header(line, "Output:") {
                field = Field::Output;
                parts[2].push(rest);
                continue;
            }
        }
        let slot = match field {
            Field::Instruction => 0,
            Field::Input => 1,
            Field::Output => 2,
        };
        parts[slot].push(line);
    }
    if field != Field::Output {
        return Err(());
    }
    let join = |p: &[&str]| p.join("\n").trim().to_string();
    let instruction = join(&parts[0]);
    let mut input = join(&parts[1]);
    let output = join(&parts[2]);
    if input == NO_INPUT {
        input.clear();
    }
    if instruction.is_empty() || output.is_empty() {
        return Err(());
    }
    Ok(InstructionTriple { instruction, input, output, origin: Origin::Generated })
}

/// Well-formed triples only; malformed blocks are dropped.
pub fn parse_completion(raw: &str) -> Vec<InstructionTriple> {
    parse_blocks(raw).into_iter().filter_map(Result::ok).collect()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// At least 90% of alphabetic characters across the three fields are ASCII
/// letters. Text without any letters fails.
pub fn looks_english(t: &InstructionTriple) -> bool {
    let mut alpha = 0usize;
    let mut ascii = 0usize;
    for c in t.instruction.chars().chain(t.input.chars()).chain(t.output.chars()) {
        if c.is_alphabetic() {
            alpha += 1;
            if c.is_ascii_alphabetic() {
                ascii += 1;
            }
        }
    }
    alpha > 0 && ascii as f64 >= MIN_ASCII_ALPHA_RATIO * alpha as f64
}

/// Checks run in a fixed order and the first failure is reported.
pub fn filter_triple(t: &InstructionTriple, pool: &SeedPool) -> Verdict {
    if word_count(&t.instruction) < MIN_INSTRUCTION_WORDS {
        Verdict::Reject(RejectReason::ShortInstruction)
    } else if !looks_english(t) {
        Verdict::Reject(RejectReason::NonEnglish)
    } else if pool.contains(t) {
        Verdict::Reject(RejectReason::Duplicate)
    } else {
        Verdict::Accept
    }
}

/// Generates until `cfg.target_count` triples are accepted (stopping at
/// exactly that many) or `cfg.max_queries` is spent. Accepted triples are
/// also appended to `pool.generated`, so later prompts can use them.
pub fn run_generation<B: CompletionBackend>(
    backend: &mut B,
    pool: &mut SeedPool,
    cfg: &ForgeConfig,
) -> Result<GenerationOutcome, ForgeError> {
    cfg.validate()?;
    generate(backend, pool, cfg, cfg.target_count, |pool, rng| {
        let demos = sample_demonstrations(pool, cfg, rng)?;
        assemble_prompt(&demos)
    })
}

/// Seed-pool bootstrap: every prompt uses three demos drawn from
/// `external_demos` only. Survivors are candidates for manual curation.
pub fn bootstrap_seeds<B: CompletionBackend>(
    backend: &mut B,
    external_demos: &[InstructionTriple],
    n_candidates: usize,
    cfg: &ForgeConfig,
) -> Result<GenerationOutcome, ForgeError> {
    cfg.validate()?;
    if external_demos.len() < BOOTSTRAP_DEMOS {
        return Err(ForgeError::NotEnoughDemos { needed: BOOTSTRAP_DEMOS, available: external_demos.len() });
    }
    let mut pool = SeedPool::new(external_demos.to_vec())?;
    generate(backend, &mut pool, cfg, n_candidates, |pool, rng| {
        let demos: Vec<InstructionTriple> = index::sample(rng, pool.seeds.len(), BOOTSTRAP_DEMOS)
            .iter()
            .map(|i| pool.seeds[i].clone())
            .collect();
        Ok(render_prompt(&demos))
    })
}

fn generate<B, F>(
    backend: &mut B,
    pool: &mut SeedPool,
    cfg: &ForgeConfig,
    target: usize,
    mut make_prompt: F,
) -> Result<GenerationOutcome, ForgeError>
where
    B: CompletionBackend,
    F: FnMut(&SeedPool, &mut DetRng) -> Result<String, ForgeError>,
{
    let mut rng = seeded(cfg.rng_seed);
    let mut dataset = Vec::new();
    let mut report = FilterReport::default();
    let mut queries = 0usize;
    while dataset.len() < target && queries < cfg.max_queries {
        let round = cfg.concurrency.min(cfg.max_queries - queries);
        let mut requests = Vec::with_capacity(round);
        for _ in 0..round {
            requests.push(CompletionRequest {
                prompt: make_prompt(pool, &mut rng)?,
                temperature: cfg.temperature,
                max_tokens: cfg.max_tokens,
            });
        }
        let results = backend.complete_batch(&requests);
        queries += round;
        for (req, result) in requests.iter().zip(results) {
            let text = complete_with_cue(&req.prompt, &result?);
            for block in parse_blocks(&text) {
                if dataset.len() >= target {
                    break;
                }
                let t = match block {
                    Ok(t) => t,
                    Err(()) => {
                        report.reject(RejectReason::Format);
                        continue;
                    }
                };
                match filter_triple(&t, pool) {
                    Verdict::Accept => {
                        pool.push_generated(t.clone());
                        dataset.push(InstructionTriple { origin: Origin::Generated, ..t });
                        report.accepted += 1;
                    }
                    Verdict::Reject(r) => report.reject(r),
                }
            }
        }
    }
    let budget_exhausted = dataset.len() < target;
    Ok(GenerationOutcome { dataset, report, queries, budget_exhausted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(i: &str, x: &str, o: &str) -> InstructionTriple {
        InstructionTriple::new(i, x, o, Origin::Seed)
    }

    fn pool(n_seeds: usize, n_gen: usize) -> SeedPool {
        let seeds = (0..n_seeds)
            .map(|i| t(&format!("Explain seed task number {i}"), "", "ok"))
            .collect();
        let mut p = SeedPool::new(seeds).unwrap();
        for i in 0..n_gen {
            assert!(p.push_generated(t(&format!("Describe generated task {i}"), "x", "y")));
        }
        p
    }

    #[test]
    fn demos_are_three_seeds_then_two_generated() {
        let p = pool(200, 50);
        let demos = sample_demonstrations(&p, &ForgeConfig::default(), &mut seeded(1)).unwrap();
        let origins: Vec<Origin> = demos.iter().map(|d| d.origin).collect();
        assert_eq!(origins, [Origin::Seed, Origin::Seed, Origin::Seed, Origin::Generated, Origin::Generated]);
    }

    #[test]
    fn shortfall_is_filled_from_distinct_seeds() {
        let p = pool(10, 0);
        let demos = sample_demonstrations(&p, &ForgeConfig::default(), &mut seeded(1)).unwrap();
        assert_eq!(demos.len(), 5);
        assert!(demos.iter().all(|d| d.origin == Origin::Seed));
        let distinct: BTreeSet<_> = demos.iter().map(|d| d.key()).collect();
        assert_eq!(distinct.len(), 5);
        let p = pool(4, 1);
        let demos = sample_demonstrations(&p, &ForgeConfig::default(), &mut seeded(1)).unwrap();
        assert_eq!(demos[4].origin, Origin::Generated);
    }

    #[test]
    fn too_small_pool_is_an_error() {
        let p = pool(3, 1);
        assert_eq!(
            sample_demonstrations(&p, &ForgeConfig::default(), &mut seeded(1)),
            Err(ForgeError::NotEnoughDemos { needed: 5, available: 4 })
        );
    }

    #[test]
    fn demo_sampling_is_deterministic() {
        let p = pool(50, 20);
        let cfg = ForgeConfig::default();
        let a = sample_demonstrations(&p, &cfg, &mut seeded(9)).unwrap();
        let b = sample_demonstrations(&p, &cfg, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prompt_has_five_demos_and_a_cue() {
        let demos: Vec<_> = (0..5).map(|i| t(&format!("Review this code {i}"), "fn main() {}", "Looks fine")).collect();
        let prompt = assemble_prompt(&demos).unwrap();
        assert_eq!(prompt.matches("Instruction:").count(), 6);
        assert!(prompt.ends_with("6. Instruction:"));
        assert_eq!(prompt, assemble_prompt(&demos).unwrap());
        assert_eq!(
            assemble_prompt(&demos[..4]),
            Err(ForgeError::WrongDemoCount { expected: 5, got: 4 })
        );
    }

    #[test]
    fn empty_input_renders_the_sentinel() {
        let mut demos: Vec<_> = (0..5).map(|i| t(&format!("Review this code {i}"), "x", "y")).collect();
        demos[2].input.clear();
        let prompt = assemble_prompt(&demos).unwrap();
        assert!(prompt.contains("3. Instruction: Review this code 2\nInput: <noinput>\n"));
    }

    #[test]
    fn parser_reads_well_formed_blocks() {
        let raw = "1. Instruction: Explain what a mutex does.\nInput: <noinput>\nOutput: It serializes access.\n\n\
                   2. Instruction: Fix the off-by-one error.\nInput: for i in 0..=n {}\nOutput: Use 0..n.\nThe range was inclusive.";
        let got = parse_completion(raw);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].instruction, "Explain what a mutex does.");
        assert_eq!(got[0].input, "");
        assert_eq!(got[0].output, "It serializes access.");
        assert_eq!(got[1].input, "for i in 0..=n {}");
        assert_eq!(got[1].output, "Use 0..n.\nThe range was inclusive.");
        assert!(got.iter().all(|x| x.origin == Origin::Generated));
    }

    #[test]
    fn block_without_output_is_dropped() {
        let raw = "1. Instruction: Explain the visitor pattern.\nInput: <noinput>\n\n\
                   2. Instruction: Name a sorting algorithm.\nInput: <noinput>\nOutput: Quicksort.";
        let blocks = parse_blocks(raw);
        assert_eq!(blocks.len(), 2);
        assert!(blocks[0].is_err());
        assert_eq!(parse_completion(raw).len(), 1);
        assert!(parse_completion("no blocks here at all").is_empty());
    }

    #[test]
    fn numbered_lists_inside_outputs_do_not_split_blocks() {
        let raw = "1. Instruction: List steps to debug a crash.\nInput: <noinput>\nOutput: Steps:\n1. Reproduce it.\n2. Read the trace.";
        let got = parse_completion(raw);
        assert_eq!(got.len(), 1);
        assert!(got[0].output.ends_with("2. Read the trace."));
    }

    #[test]
    fn cue_is_restored_before_parsing() {
        let prompt = "...\n\n6. Instruction:";
        let text = complete_with_cue(prompt, " Sort a list in Python.\nInput: [3, 1]\nOutput: sorted(xs)");
        assert_eq!(parse_completion(&text)[0].instruction, "Sort a list in Python.");
        let own = "7. Instruction: a b c\nInput: x\nOutput: y";
        assert_eq!(complete_with_cue(prompt, own), own);
    }

    #[test]
    fn filter_verdicts() {
        let p = SeedPool::new(vec![t("Explain the observer pattern", "", "It notifies.")]).unwrap();
        assert_eq!(filter_triple(&t("Fix bug", "", "done"), &p), Verdict::Reject(RejectReason::ShortInstruction));
        assert_eq!(filter_triple(&t("Explain the visitor pattern", "", "It separates algorithms."), &p), Verdict::Accept);
        assert_eq!(
            filter_triple(&t("Explain the observer pattern", "", "It notifies."), &p),
            Verdict::Reject(RejectReason::Duplicate)
        );
        assert_eq!(
            filter_triple(&t("解释 这个 函数 的 作用", "", "它 返回 一个 值"), &p),
            Verdict::Reject(RejectReason::NonEnglish)
        );
        assert_eq!(filter_triple(&t("1 2 3", "", "4"), &p), Verdict::Reject(RejectReason::NonEnglish));
    }

    #[test]
    fn english_threshold_is_ninety_percent() {
        // 9 ASCII letters + 1 non-ASCII letter: exactly 90%.
        assert!(looks_english(&t("abc def gh", "é", "i")));
        assert!(!looks_english(&t("abc def g", "éé", "")));
    }

    #[test]
    fn pool_rejects_duplicate_seeds() {
        let s = t("Explain the observer pattern", "", "x");
        assert_eq!(SeedPool::new(vec![s.clone(), s]), Err(ForgeError::DuplicateSeed(1)));
        assert_eq!(SeedPool::new(vec![]), Err(ForgeError::EmptyPool));
    }

    struct Scripted {
        texts: Vec<String>,
        calls: usize,
    }

    impl CompletionBackend for Scripted {
        fn complete(&mut self, _: &CompletionRequest) -> Result<String, BackendError> {
            let s = self.texts[self.calls % self.texts.len()].clone();
            self.calls += 1;
            Ok(s)
        }
    }

    fn ten_blocks(tag: usize) -> String {
        (0..10)
            .map(|i| format!("{}. Instruction: Write test case {tag} {i}\nInput: <noinput>\nOutput: assert true\n", i + 6))
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn generation_stops_exactly_at_target() {
        let mut be = Scripted { texts: (0..10).map(ten_blocks).collect(), calls: 0 };
        let mut p = pool(10, 0);
        let cfg = ForgeConfig { target_count: 25, ..ForgeConfig::default() };
        let out = run_generation(&mut be, &mut p, &cfg).unwrap();
        assert_eq!(out.dataset.len(), 25);
        assert_eq!(out.report.accepted, 25);
        assert_eq!(out.queries, 3);
        assert!(!out.budget_exhausted);
        assert_eq!(p.generated().len(), 25);
    }

    #[test]
    fn zero_target_makes_no_calls() {
        let mut be = Scripted { texts: vec![ten_blocks(0)], calls: 0 };
        let mut p = pool(10, 0);
        let cfg = ForgeConfig { target_count: 0, ..ForgeConfig::default() };
        let out = run_generation(&mut be, &mut p, &cfg).unwrap();
        assert!(out.dataset.is_empty());
        assert_eq!(be.calls, 0);
    }

    #[test]
    fn budget_exhaustion_flags_partial_runs() {
        // The same completion every time: only the first query contributes.
        let mut be = Scripted { texts: vec![ten_blocks(0)], calls: 0 };
        let mut p = pool(10, 0);
        let cfg = ForgeConfig { target_count: 25, max_queries: 4, ..ForgeConfig::default() };
        let out = run_generation(&mut be, &mut p, &cfg).unwrap();
        assert_eq!(out.dataset.len(), 10);
        assert_eq!(out.report.rejected(RejectReason::Duplicate), 30);
        assert!(out.budget_exhausted);
        assert_eq!(out.report.total_candidates(), 40);
    }

    #[test]
    fn bootstrap_uses_only_external_demos() {
        struct Recorder(Vec<String>);
        impl CompletionBackend for Recorder {
            fn complete(&mut self, r: &CompletionRequest) -> Result<String, BackendError> {
                self.0.push(r.prompt.clone());
                Ok(ten_blocks(self.0.len()))
            }
        }
        let ext = vec![
            t("Give a synonym for happy", "", "glad"),
            t("Sum these two numbers", "2, 3", "5"),
            t("Translate hello to French", "", "bonjour"),
        ];
        let mut be = Recorder(Vec::new());
        let out = bootstrap_seeds(&mut be, &ext, 25, &ForgeConfig::default()).unwrap();
        assert_eq!(out.dataset.len(), 25);
        for prompt in &be.0 {
            assert_eq!(prompt.matches("Instruction:").count(), 4);
            for e in &ext {
                assert!(prompt.contains(&e.instruction));
            }
        }
        let none = bootstrap_seeds(&mut be, &ext, 0, &ForgeConfig::default()).unwrap();
        assert!(none.dataset.is_empty());
    }
}
