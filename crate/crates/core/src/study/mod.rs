//! Human evaluation: blinded pairs, two raters per pair, 0–3 ratings,
//! aggregation, agreement statistics and senior adjudication.
//!
//! [`Study`] is a plain value; the `sotana` crate wraps it in a
//! single-writer store with an audit log and the HTTP API.

mod agreement;

pub use agreement::{kendall_tau_b, krippendorff_alpha_ordinal};

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::DetRng;

pub const RUBRIC_VERSION: &str = "rubric-v1";
pub const SCORE_LEVELS: usize = 4;
pub const MAX_SCORE: u8 = 3;
pub const RATERS_PER_PAIR: usize = 2;
pub const DEFAULT_CONFIDENCE_THRESHOLD: u8 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StudyError {
    #[error("need at least {needed} raters, got {got}")]
    TooFewRaters { needed: usize, got: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("unknown pair {0:?}")]
    UnknownPair(String),
    #[error("unknown rater {0:?}")]
    UnknownRater(String),
    #[error("rater {rater:?} is not assigned to pair {pair:?}")]
    NotAssigned { pair: String, rater: String },
    #[error("{field} must be between 0 and 3, got {value}")]
    ScoreOutOfRange { field: &'static str, value: i64 },
    #[error("value {value} outside 0..{levels}")]
    ValueOutOfRange { value: i64, levels: usize },
    #[error("{0:?} is not a senior rater")]
    NotSenior(String),
    #[error("no low-confidence rating by {rater:?} on pair {pair:?} awaits adjudication")]
    NotQueued { pair: String, rater: String },
    #[error("study incomplete, pairs missing ratings: {0:?}")]
    Incomplete(Vec<String>),
    #[error("no item has ratings from two raters")]
    NoCoRatedItems,
    #[error("alpha is undefined when only one value occurs")]
    AlphaUndefined,
    #[error("tau-b is undefined when one list is entirely tied")]
    TauUndefined,
    #[error("lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("the study has no pairs")]
    NoPairs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Alignment,
    Accuracy,
    Readability,
}

impl Dimension {
    /// The aggregated dimensions; confidence is not one of them.
    pub const ALL: [Dimension; 3] = [Dimension::Alignment, Dimension::Accuracy, Dimension::Readability];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Alignment => "alignment",
            Dimension::Accuracy => "accuracy",
            Dimension::Readability => "readability",
        }
    }
}

/// Criterion text per level 0..=3 for the four rated aspects.
pub const RUBRIC: [(&str, [&str; 4]); 4] = [
    (
        "alignment",
        [
            "The answer is entirely irrelevant, containing content that is unrelated to the question's topic.",
            "The answer is somewhat related to the topic, but its connection to the question is weak and not directly focused on the problem.",
            "The answer is relevant, displaying an understanding of the question's topic, but it may not encompass all aspects or nuances of the problem.",
            "The answer is highly relevant, demonstrating a deep comprehension of the question's topic and closely connecting to all aspects of the problem.",
        ],
    ),
    (
        "accuracy",
        [
            "The answer is entirely incorrect, providing false information or suggesting an invalid solution.",
            "The answer contains some correct information but also has significant inaccuracies or misconceptions.",
            "The answer is mostly accurate, with only minor errors or omissions.",
            "The answer is completely accurate, providing correct information and a valid solution.",
        ],
    ),
    (
        "readability",
        [
            "The answer is extremely difficult to understand, with poor grammar, structure, or excessive jargon.",
            "The answer is somewhat difficult to understand or has some grammatical errors and unclear explanations.",
            "The answer is clear, well-structured, and has only minor grammatical errors or room for improvement.",
            "The answer is very clear, well-structured, and free from grammatical errors, making it easy to understand.",
        ],
    ),
    (
        "confidence",
        [
            "The rater is not at all confident in their evaluation of the answer and feels unsure about the assigned scores.",
            "The rater has low confidence in their evaluation and may have doubts about the assigned scores.",
            "The rater is fairly confident in their evaluation, with only minor uncertainties about the assigned scores.",
            "The rater is highly confident in their evaluation and feels certain about the assigned scores.",
        ],
    ),
];

/// A question/answer pair as stored. `hidden_model_tag` never leaves the
/// study through rater-facing types.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub pair_id: String,
    pub question_title: String,
    pub question_body: String,
    pub answer_text: String,
    pub hidden_model_tag: String,
}

/// The rater-facing view of a pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairView {
    pub pair_id: String,
    pub title: String,
    pub body: String,
    pub answer: String,
    pub rubric_version: String,
}

impl From<&QaPair> for PairView {
    fn from(p: &QaPair) -> Self {
        Self {
            pair_id: p.pair_id.clone(),
            title: p.question_title.clone(),
            body: p.question_body.clone(),
            answer: p.answer_text.clone(),
            rubric_version: String::from(RUBRIC_VERSION),
        }
    }
}

/// What a rater submits. Scores are wide integers so out-of-range values
/// reach validation instead of failing to decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub pair_id: String,
    pub rater_id: String,
    pub alignment: i64,
    pub accuracy: i64,
    pub readability: i64,
    pub confidence: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub pair_id: String,
    pub rater_id: String,
    pub alignment: u8,
    pub accuracy: u8,
    pub readability: u8,
    pub confidence: u8,
    /// Caller-supplied clock, milliseconds.
    pub timestamp: u64,
}

impl RatingRecord {
    pub fn score(&self, d: Dimension) -> u8 {
        match d {
            Dimension::Alignment => self.alignment,
            Dimension::Accuracy => self.accuracy,
            Dimension::Readability => self.readability,
        }
    }
}

impl RatingSubmission {
    pub fn validate(&self, timestamp: u64) -> Result<RatingRecord, StudyError> {
        let check = |field: &'static str, v: i64| {
            if (0..=MAX_SCORE as i64).contains(&v) {
                Ok(v as u8)
            } else {
                Err(StudyError::ScoreOutOfRange { field, value: v })
            }
        };
        Ok(RatingRecord {
            pair_id: self.pair_id.clone(),
            rater_id: self.rater_id.clone(),
            alignment: check("alignment", self.alignment)?,
            accuracy: check("accuracy", self.accuracy)?,
            readability: check("readability", self.readability)?,
            confidence: check("confidence", self.confidence)?,
            timestamp,
        })
    }
}

/// A senior's re-rating of one rater's low-confidence record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationSubmission {
    pub pair_id: String,
    /// The rater whose record is being replaced.
    pub rater_id: String,
    pub senior_id: String,
    pub alignment: i64,
    pub accuracy: i64,
    pub readability: i64,
    pub confidence: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjudication {
    pub senior_id: String,
    /// Stored with `rater_id` = the senior.
    pub record: RatingRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub pair_id: String,
    pub rater_id: String,
    pub confidence: u8,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub rated: usize,
    pub assigned: usize,
}

/// Result of storing a rating; `replaced` is the earlier record on a
/// resubmission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recorded {
    pub record: RatingRecord,
    pub replaced: Option<RatingRecord>,
}

/// `per_pair` distinct raters for every pair, loads within one of each
/// other. Raters and pairs are shuffled once, then dealt round-robin.
pub fn create_assignments(
    pair_ids: &[String],
    raters: &[String],
    per_pair: usize,
    rng: &mut DetRng,
) -> Result<BTreeMap<String, Vec<String>>, StudyError> {
    if raters.len() < per_pair || per_pair == 0 {
        return Err(StudyError::TooFewRaters { needed: per_pair.max(1), got: raters.len() });
    }
    let distinct: BTreeSet<&String> = raters.iter().collect();
    if distinct.len() != raters.len() {
        let dup = raters.iter().find(|r| raters.iter().filter(|q| q == r).count() > 1).unwrap();
        return Err(StudyError::DuplicateId(dup.clone()));
    }
    let mut order: Vec<&String> = raters.iter().collect();
    order.shuffle(rng);
    let mut pairs: Vec<&String> = pair_ids.iter().collect();
    pairs.shuffle(rng);
    let mut out = BTreeMap::new();
    let mut slot = 0usize;
    for p in pairs {
        let who: Vec<String> = (0..per_pair).map(|i| order[(slot + i) % order.len()].clone()).collect();
        slot += per_pair;
        if out.insert(p.clone(), who).is_some() {
            return Err(StudyError::DuplicateId(p.clone()));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pairs: Vec<QaPair>,
    raters: Vec<String>,
    seniors: BTreeSet<String>,
    assignments: BTreeMap<String, Vec<String>>,
    /// Keyed by (pair_id, rater_id).
    #[serde(with = "entries")]
    ratings: BTreeMap<(String, String), RatingRecord>,
    /// Keyed by (pair_id, replaced rater_id).
    #[serde(with = "entries")]
    adjudications: BTreeMap<(String, String), Adjudication>,
}

/// Maps with tuple keys as lists of `[key, value]`; JSON object keys must
/// be strings.
mod entries {
    use alloc::collections::BTreeMap;
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, K: Serialize, V: Serialize>(m: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D, K, V>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        D: Deserializer<'de>,
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

impl Study {
    pub fn new(
        pairs: Vec<QaPair>,
        raters: Vec<String>,
        seniors: Vec<String>,
        rng: &mut DetRng,
    ) -> Result<Self, StudyError> {
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if !seen.insert(p.pair_id.clone()) {
                return Err(StudyError::DuplicateId(p.pair_id.clone()));
            }
        }
        let ids: Vec<String> = pairs.iter().map(|p| p.pair_id.clone()).collect();
        let assignments = create_assignments(&ids, &raters, RATERS_PER_PAIR, rng)?;
        Ok(Self {
            pairs,
            raters,
            seniors: seniors.into_iter().collect(),
            assignments,
            ratings: BTreeMap::new(),
            adjudications: BTreeMap::new(),
        })
    }

    /// Re-checks the invariants `new` and the mutators maintain, for a
    /// study read back from storage.
    pub fn check_consistency(&self) -> Result<(), StudyError> {
        let mut seen = BTreeSet::new();
        for p in &self.pairs {
            if !seen.insert(p.pair_id.as_str()) {
                return Err(StudyError::DuplicateId(p.pair_id.clone()));
            }
            let raters = self.assignments.get(&p.pair_id).ok_or_else(|| StudyError::UnknownPair(p.pair_id.clone()))?;
            let distinct: BTreeSet<&String> = raters.iter().collect();
            if raters.len() != RATERS_PER_PAIR || distinct.len() != RATERS_PER_PAIR {
                return Err(StudyError::TooFewRaters { needed: RATERS_PER_PAIR, got: distinct.len() });
            }
            for r in raters {
                self.check_rater(r)?;
            }
        }
        if self.assignments.len() != self.pairs.len() {
            return Err(StudyError::DuplicateId(String::from("assignment without a pair")));
        }
        for ((pair, rater), r) in &self.ratings {
            if !self.is_assigned(pair, rater) || &r.pair_id != pair || &r.rater_id != rater {
                return Err(StudyError::NotAssigned { pair: pair.clone(), rater: rater.clone() });
            }
        }
        for ((pair, rater), a) in &self.adjudications {
            if !self.ratings.contains_key(&(pair.clone(), rater.clone())) || !self.is_senior(&a.senior_id) {
                return Err(StudyError::NotQueued { pair: pair.clone(), rater: rater.clone() });
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[QaPair] {
        &self.pairs
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn is_senior(&self, id: &str) -> bool {
        self.seniors.contains(id)
    }

    pub fn assignments(&self) -> &BTreeMap<String, Vec<String>> {
        &self.assignments
    }

    pub fn ratings(&self) -> impl Iterator<Item = &RatingRecord> {
        self.ratings.values()
    }

    pub fn adjudications(&self) -> impl Iterator<Item = (&(String, String), &Adjudication)> {
        self.adjudications.iter()
    }

    pub fn rating(&self, pair_id: &str, rater_id: &str) -> Option<&RatingRecord> {
        self.ratings.get(&(String::from(pair_id), String::from(rater_id)))
    }

    pub fn is_assigned(&self, pair_id: &str, rater_id: &str) -> bool {
        self.assignments.get(pair_id).is_some_and(|rs| rs.iter().any(|r| r == rater_id))
    }

    pub fn load_of(&self, rater_id: &str) -> usize {
        self.assignments.values().filter(|rs| rs.iter().any(|r| r == rater_id)).count()
    }

    pub fn progress(&self, rater_id: &str) -> Result<Progress, StudyError> {
        self.check_rater(rater_id)?;
        let assigned = self.load_of(rater_id);
        let rated = self.ratings.keys().filter(|(_, r)| r == rater_id).count();
        Ok(Progress { rated, assigned })
    }

    fn check_rater(&self, rater_id: &str) -> Result<(), StudyError> {
        if self.raters.iter().any(|r| r == rater_id) {
            Ok(())
        } else {
            Err(StudyError::UnknownRater(String::from(rater_id)))
        }
    }

    /// The first pair, in study order, assigned to the rater and not yet
    /// rated by them; `None` once they are done.
    pub fn next_for(&self, rater_id: &str) -> Result<Option<PairView>, StudyError> {
        self.check_rater(rater_id)?;
        Ok(self
            .pairs
            .iter()
            .find(|p| self.is_assigned(&p.pair_id, rater_id) && self.rating(&p.pair_id, rater_id).is_none())
            .map(PairView::from))
    }

    /// Stores a rating; a resubmission by the same rater replaces the
    /// earlier one.
    pub fn record_rating(&mut self, sub: &RatingSubmission, timestamp: u64) -> Result<Recorded, StudyError> {
        let record = sub.validate(timestamp)?;
        if !self.assignments.contains_key(&record.pair_id) {
            return Err(StudyError::UnknownPair(record.pair_id));
        }
        if !self.is_assigned(&record.pair_id, &record.rater_id) {
            return Err(StudyError::NotAssigned { pair: record.pair_id, rater: record.rater_id });
        }
        let key = (record.pair_id.clone(), record.rater_id.clone());
        let replaced = self.ratings.insert(key, record.clone());
        Ok(Recorded { record, replaced })
    }

    /// Ratings below `threshold` confidence that no senior has handled yet,
    /// oldest first.
    pub fn adjudication_queue(&self, threshold: u8) -> Vec<QueueItem> {
        let mut q: Vec<QueueItem> = self
            .ratings
            .iter()
            .filter(|(k, r)| r.confidence < threshold && !self.adjudications.contains_key(*k))
            .map(|(_, r)| QueueItem {
                pair_id: r.pair_id.clone(),
                rater_id: r.rater_id.clone(),
                confidence: r.confidence,
                timestamp: r.timestamp,
            })
            .collect();
        q.sort_by(|a, b| (a.timestamp, &a.pair_id, &a.rater_id).cmp(&(b.timestamp, &b.pair_id, &b.rater_id)));
        q
    }

    /// Records a senior re-rating that replaces the named rater's record in
    /// aggregation. Only queued items can be adjudicated.
    pub fn adjudicate(
        &mut self,
        sub: &AdjudicationSubmission,
        threshold: u8,
        timestamp: u64,
    ) -> Result<Adjudication, StudyError> {
        if !self.is_senior(&sub.senior_id) {
            return Err(StudyError::NotSenior(sub.senior_id.clone()));
        }
        let record = RatingSubmission {
            pair_id: sub.pair_id.clone(),
            rater_id: sub.senior_id.clone(),
            alignment: sub.alignment,
            accuracy: sub.accuracy,
            readability: sub.readability,
            confidence: sub.confidence,
        }
        .validate(timestamp)?;
        let key = (sub.pair_id.clone(), sub.rater_id.clone());
        let queued = self.ratings.get(&key).is_some_and(|r| r.confidence < threshold)
            && !self.adjudications.contains_key(&key);
        if !queued {
            return Err(StudyError::NotQueued { pair: sub.pair_id.clone(), rater: sub.rater_id.clone() });
        }
        let adj = Adjudication { senior_id: sub.senior_id.clone(), record };
        self.adjudications.insert(key, adj.clone());
        Ok(adj)
    }

    /// The records that count for a pair: each assigned rater's rating, or
    /// the senior's where one was adjudicated.
    fn effective(&self, pair_id: &str) -> Vec<&RatingRecord> {
        let Some(raters) = self.assignments.get(pair_id) else {
            return Vec::new();
        };
        raters
            .iter()
            .filter_map(|r| {
                let key = (String::from(pair_id), r.clone());
                self.adjudications.get(&key).map(|a| &a.record).or_else(|| self.ratings.get(&key))
            })
            .collect()
    }

    /// Per model: mean and population std over pairs of the two-rater mean
    /// score. Incomplete pairs are an error unless `exclude_incomplete`.
    pub fn aggregate_scores(&self, exclude_incomplete: bool) -> Result<AggregateTable, StudyError> {
        let mut missing = Vec::new();
        let mut per_model: BTreeMap<String, Vec<[f64; 3]>> = BTreeMap::new();
        for p in &self.pairs {
            let eff = self.effective(&p.pair_id);
            if eff.len() < RATERS_PER_PAIR {
                missing.push(p.pair_id.clone());
                continue;
            }
            let mut row = [0.0; 3];
            for (slot, d) in Dimension::ALL.iter().enumerate() {
                row[slot] = eff.iter().map(|r| r.score(*d) as f64).sum::<f64>() / eff.len() as f64;
            }
            per_model.entry(p.hidden_model_tag.clone()).or_default().push(row);
        }
        if !missing.is_empty() && !exclude_incomplete {
            return Err(StudyError::Incomplete(missing));
        }
        let models = per_model
            .into_iter()
            .map(|(model, rows)| {
                let col = |i: usize| MeanStd::of(&rows.iter().map(|r| r[i]).collect::<Vec<_>>());
                let scores = ModelScores { pairs: rows.len(), alignment: col(0), accuracy: col(1), readability: col(2) };
                (model, scores)
            })
            .collect();
        Ok(AggregateTable { models, excluded: missing })
    }

    /// Items × raters matrix of one dimension over original ratings.
    pub fn rating_matrix(&self, d: Dimension) -> Vec<Vec<Option<u8>>> {
        self.pairs
            .iter()
            .map(|p| {
                self.raters
                    .iter()
                    .map(|r| self.rating(&p.pair_id, r).map(|rec| rec.score(d)))
                    .collect()
            })
            .collect()
    }

    /// Alpha per dimension and tau-b for every rater pair with co-rated
    /// items, per dimension and pooled over the three dimensions. Agreement
    /// uses the raters' own ratings, not adjudicated ones.
    pub fn agreement(&self) -> AgreementReport {
        let mut alpha = BTreeMap::new();
        for d in Dimension::ALL {
            let a = krippendorff_alpha_ordinal(&self.rating_matrix(d), SCORE_LEVELS).ok();
            alpha.insert(d, a);
        }
        let mut taus = Vec::new();
        for (i, ra) in self.raters.iter().enumerate() {
            for rb in &self.raters[i + 1..] {
                let co: Vec<(&RatingRecord, &RatingRecord)> = self
                    .pairs
                    .iter()
                    .filter_map(|p| Some((self.rating(&p.pair_id, ra)?, self.rating(&p.pair_id, rb)?)))
                    .collect();
                if co.is_empty() {
                    continue;
                }
                let mut per_dim = BTreeMap::new();
                let (mut px, mut py) = (Vec::new(), Vec::new());
                for d in Dimension::ALL {
                    let x: Vec<i64> = co.iter().map(|(a, _)| a.score(d) as i64).collect();
                    let y: Vec<i64> = co.iter().map(|(_, b)| b.score(d) as i64).collect();
                    per_dim.insert(d, kendall_tau_b(&x, &y).ok());
                    px.extend(x);
                    py.extend(y);
                }
                taus.push(PairTau {
                    rater_a: ra.clone(),
                    rater_b: rb.clone(),
                    co_rated: co.len(),
                    per_dimension: per_dim,
                    pooled: kendall_tau_b(&px, &py).ok(),
                });
            }
        }
        AgreementReport { alpha_per_dimension: alpha, pairwise_tau: taus }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: libm::sqrt(var) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScores {
    pub pairs: usize,
    pub alignment: MeanStd,
    pub accuracy: MeanStd,
    pub readability: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    pub models: BTreeMap<String, ModelScores>,
    /// Pairs left out for missing ratings.
    pub excluded: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTau {
    pub rater_a: String,
    pub rater_b: String,
    pub co_rated: usize,
    /// `None` where tau-b is undefined (a list entirely tied).
    pub per_dimension: BTreeMap<Dimension, Option<f64>>,
    pub pooled: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    /// `None` where alpha is undefined.
    pub alpha_per_dimension: BTreeMap<Dimension, Option<f64>>,
    pub pairwise_tau: Vec<PairTau>,
}
