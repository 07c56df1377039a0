//! Reference-based text metrics and the pass@k estimator.
//!
//! BLEU, METEOR and ROUGE-L are reported on a 0–100 scale, CIDEr on 0–10.
//! Every function is pure; equal inputs give bit-identical outputs.

mod bleu;
mod cider;
mod meteor;
mod passk;
mod rouge;

pub use bleu::bleu_dc;
pub use cider::{cider, cider_per_example};
pub use meteor::meteor;
pub use passk::pass_at_k;
pub use rouge::{lcs_len, rouge_l};

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("CIDEr needs a corpus of at least 2 examples, got {0}")]
    CorpusTooSmall(usize),
    #[error("pass@k needs 0 <= c <= n and 1 <= k <= n (n={n}, c={c}, k={k})")]
    InvalidPassAtK { n: u64, c: u64, k: u64 },
}

/// Lowercased tokens. Runs of letters, digits and `_` form one token; any
/// other non-space character is a token by itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined form; `tokenize` maps it back to `self`.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

impl<S: AsRef<str>> FromIterator<S> for TokenSeq {
    /// Wraps already-split tokens as-is.
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self { tokens: iter.into_iter().map(|s| String::from(s.as_ref())).collect() }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if is_word_char(c) {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(core::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(String::from(c));
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    TokenSeq { tokens }
}

/// Counts of every `n`-gram in `tokens`.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> alloc::collections::BTreeMap<&[String], usize> {
    let mut counts = alloc::collections::BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    pub bleu: f64,
    pub meteor: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub bleu_mean: f64,
    pub meteor_mean: f64,
    pub rouge_l_mean: f64,
    pub cider: f64,
}

/// Scale and variant notes written at the top of every report so numbers
/// are only compared like with like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleHeader {
    pub bleu: String,
    pub meteor: String,
    pub rouge_l: String,
    pub cider: String,
}

impl Default for ScaleHeader {
    fn default() -> Self {
        Self {
            bleu: "0-100, sentence BLEU-4, uniform weights, Chen-Cherry smoothing method 4".into(),
            meteor: "0-100, exact unigram matching, alpha=0.9 beta=3 gamma=0.5".into(),
            rouge_l: "0-100, LCS F1".into(),
            cider: "0-10, plain CIDEr n=1..4, idf=ln(N/df) over references".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scale: ScaleHeader,
    pub per_example: Vec<ExampleScores>,
    pub corpus: CorpusScores,
}

/// Scores aligned `(id, candidate, reference)` triples.
pub fn score_corpus(
    ids: &[String],
    candidates: &[TokenSeq],
    references: &[TokenSeq],
) -> Result<MetricReport, MetricError> {
    if candidates.len() != references.len() || ids.len() != candidates.len() {
        return Err(MetricError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    let cider_score = cider(candidates, references)?;
    let mut per_example = Vec::with_capacity(ids.len());
    for ((id, c), r) in ids.iter().zip(candidates).zip(references) {
        per_example.push(ExampleScores {
            id: id.clone(),
            bleu: bleu_dc(c, r)?,
            meteor: meteor(c, r)?,
            rouge_l: rouge_l(c, r)?,
        });
    }
    let n = per_example.len() as f64;
    let mean = |f: fn(&ExampleScores) -> f64| per_example.iter().map(f).sum::<f64>() / n;
    let corpus = CorpusScores {
        bleu_mean: mean(|e| e.bleu),
        meteor_mean: mean(|e| e.meteor),
        rouge_l_mean: mean(|e| e.rouge_l),
        cider: cider_score,
    };
    Ok(MetricReport { scale: ScaleHeader::default(), per_example, corpus })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPass {
    pub task_id: String,
    pub samples: u64,
    pub correct: u64,
    pub pass_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub k: u64,
    pub per_task: Vec<TaskPass>,
    /// Mean over tasks, 0–100.
    pub pass_at_k: f64,
}

pub fn pass_report(k: u64, tasks: &[(String, u64, u64)]) -> Result<PassReport, MetricError> {
    let mut per_task = Vec::with_capacity(tasks.len());
    for (id, n, c) in tasks {
        per_task.push(TaskPass { task_id: id.clone(), samples: *n, correct: *c, pass_at_k: pass_at_k(*n, *c, k)? });
    }
    let mean = if per_task.is_empty() {
        0.0
    } else {
        100.0 * per_task.iter().map(|t| t.pass_at_k).sum::<f64>() / per_task.len() as f64
    };
    Ok(PassReport { k, per_task, pass_at_k: mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| String::from(*t)).collect()
    }

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(tokenize("Use pathinfo().").tokens(), toks(&["use", "pathinfo", "(", ")", "."]));
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \n\t ").is_empty());
        assert_eq!(tokenize("x+=10_000;").tokens(), toks(&["x", "+", "=", "10_000", ";"]));
        assert_eq!(tokenize("Größe 42").tokens(), toks(&["größe", "42"]));
    }

    #[test]
    fn tokenize_is_a_fixed_point_of_join() {
        for s in ["Use pathinfo().", "a->b :: c", "HTTP/1.1 404 Not Found!", "x"] {
            let t = tokenize(s);
            assert_eq!(tokenize(&t.joined()), t);
        }
    }

    #[test]
    fn report_means_are_arithmetic_means() {
        let ids = vec![String::from("a"), String::from("b")];
        let c = vec![tokenize("the cat sat on the mat"), tokenize("hello there")];
        let r = vec![tokenize("the cat sat on the mat"), tokenize("general kenobi")];
        let rep = score_corpus(&ids, &c, &r).unwrap();
        assert_eq!(rep.per_example.len(), 2);
        let b = (rep.per_example[0].bleu + rep.per_example[1].bleu) / 2.0;
        assert_eq!(rep.corpus.bleu_mean, b);
        assert!((rep.per_example[0].bleu - 100.0).abs() < 1e-9);
        assert_eq!(rep.per_example[1].rouge_l, 0.0);
        assert!(rep.corpus.cider >= 0.0 && rep.corpus.cider <= 10.0);
        assert!(score_corpus(&ids[..1], &c, &r).is_err());
    }

    #[test]
    fn pass_report_averages_tasks() {
        let rep = pass_report(1, &[("t1".into(), 5, 2), ("t2".into(), 5, 5)]).unwrap();
        assert!((rep.pass_at_k - 70.0).abs() < 1e-12);
        assert!(pass_report(1, &[("t".into(), 1, 2)]).is_err());
    }
}
