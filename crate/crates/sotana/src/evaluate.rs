//! The three evaluation suites: text metrics for question answering and
//! code summarization, pass@k for code generation.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sotana_core::corpus::{CodegenTask, SoQuestion, SummarizationPair};
use sotana_core::evalmetrics::{pass_report, score_corpus, tokenize, MetricError, MetricReport, PassReport};

use crate::exec::{execute_candidate, ExecError, ExecLimits, ExecOutcome, Runner};

/// One model output for a QA or summarization example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub prediction: String,
}

/// One sampled completion for a codegen task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodegenSample {
    pub task_id: String,
    pub completion: String,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no prediction for example {0:?}")]
    MissingPrediction(String),
    #[error("two predictions for example {0:?}")]
    DuplicatePrediction(String),
    #[error("prediction for unknown example {0:?}")]
    UnknownExample(String),
    #[error("task {task:?} has {got} samples, {needed} requested")]
    TooFewSamples { task: String, needed: usize, got: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// QA examples are keyed by question id, the question title and body form
/// the model input, the accepted answer is the reference.
pub fn qa_examples(questions: &[SoQuestion]) -> Vec<(String, String, String)> {
    questions
        .iter()
        .map(|q| (q.id.clone(), format!("{}\n\n{}", q.title, q.body), q.answer.clone()))
        .collect()
}

/// Summarization examples are keyed by their 0-based position in the file.
pub fn summ_examples(pairs: &[SummarizationPair]) -> Vec<(String, String, String)> {
    pairs.iter().enumerate().map(|(i, p)| (i.to_string(), p.code.clone(), p.summary.clone())).collect()
}

/// Scores predictions against `(id, input, reference)` examples. Every
/// example needs exactly one prediction.
pub fn score_predictions(
    examples: &[(String, String, String)],
    predictions: &[Prediction],
) -> Result<MetricReport, EvalError> {
    let mut by_id: HashMap<&str, &str> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(&p.id, &p.prediction).is_some() {
            return Err(EvalError::DuplicatePrediction(p.id.clone()));
        }
    }
    let mut ids = Vec::with_capacity(examples.len());
    let mut cands = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    for (id, _, reference) in examples {
        let pred = by_id.remove(id.as_str()).ok_or_else(|| EvalError::MissingPrediction(id.clone()))?;
        ids.push(id.clone());
        cands.push(tokenize(pred));
        refs.push(tokenize(reference));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(EvalError::UnknownExample(extra.to_string()));
    }
    Ok(score_corpus(&ids, &cands, &refs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodegenReport {
    pub pass: PassReport,
    pub executions: Vec<ExecOutcome>,
}

#[derive(Debug, Clone, Copy)]
pub struct CodegenSettings {
    pub k: u64,
    /// Samples used per task; the first `samples` in file order.
    pub samples: usize,
    pub limits: ExecLimits,
    pub workers: usize,
}

/// Executes the first `samples` completions of every task and estimates
/// pass@k from the counts.
pub fn eval_codegen(
    tasks: &[CodegenTask],
    samples: &[CodegenSample],
    settings: CodegenSettings,
    runner: &Runner,
) -> Result<CodegenReport, EvalError> {
    let known: BTreeMap<&str, &CodegenTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut per_task: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in samples {
        if !known.contains_key(s.task_id.as_str()) {
            return Err(EvalError::UnknownExample(s.task_id.clone()));
        }
        per_task.entry(&s.task_id).or_default().push(&s.completion);
    }
    let mut jobs: Vec<(&CodegenTask, &str)> = Vec::new();
    for t in tasks {
        let got = per_task.get(t.task_id.as_str()).map_or(0, Vec::len);
        if got < settings.samples {
            return Err(EvalError::TooFewSamples { task: t.task_id.clone(), needed: settings.samples, got });
        }
        for c in &per_task[t.task_id.as_str()][..settings.samples] {
            jobs.push((t, c));
        }
    }
    let executions = run_jobs(&jobs, settings, runner)?;
    let mut counts: Vec<(String, u64, u64)> = tasks.iter().map(|t| (t.task_id.clone(), 0, 0)).collect();
    let index: HashMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.task_id.as_str(), i)).collect();
    for e in &executions {
        let slot = &mut counts[index[e.task_id.as_str()]];
        slot.1 += 1;
        slot.2 += u64::from(e.passed);
    }
    Ok(CodegenReport { pass: pass_report(settings.k, &counts)?, executions })
}

/// Runs jobs on up to `workers` threads; outcomes keep job order.
fn run_jobs(
    jobs: &[(&CodegenTask, &str)],
    settings: CodegenSettings,
    runner: &Runner,
) -> Result<Vec<ExecOutcome>, ExecError> {
    let slots: Vec<Mutex<Option<Result<ExecOutcome, ExecError>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..settings.workers.max(1).min(jobs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let Some((task, completion)) = jobs.get(i) else { break };
                let r = execute_candidate(task, completion, settings.limits, runner);
                if let Ok(o) = &r {
                    log::debug!("{} -> {:?} in {} ms", o.task_id, o.status, o.wall_ms);
                }
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every job slot is filled"))
        .collect()
}
