//! Robustness subsets, answer scoring and validation/test splitting.
//!
//! A sample is *bias-prone* when the model gives the same wrong answer on the
//! original input and on every visual counterfactual, and *sensitivity-prone*
//! when every textual counterfactual changes its answer.

pub mod answer;
pub mod corpus;
pub mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::ImageRef;

pub use answer::{expected_answer, extract_answer, AnswerAliases, AnswerFormat, UNPARSED};

/// Strategy tag of the plain greedy records used to build the subsets.
pub const BASE_TAG: &str = "base";
pub const ORIGINAL_ID: &str = "orig";
pub const OVERALL: &str = "Overall";

pub fn visual_id(j: usize) -> String {
    format!("V{j}")
}

pub fn textual_id(i: usize) -> String {
    format!("T{i}")
}

#[derive(Debug, thiserror::Error)]
pub enum DrbenchError {
    #[error("split fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("cannot read subsets: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionType {
    #[serde(rename = "MCQ")]
    Mcq,
    Others,
}

impl QuestionType {
    pub const ALL: [QuestionType; 2] = [QuestionType::Mcq, QuestionType::Others];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Mcq => "MCQ",
            QuestionType::Others => "Others",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn record_version() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    #[serde(default = "record_version")]
    pub v: u32,
    pub id: String,
    pub dataset: String,
    pub question_type: QuestionType,
    #[serde(rename = "image_ref")]
    pub image: ImageRef,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    pub gt_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default = "record_version")]
    pub v: u32,
    pub sample_id: String,
    pub variant_id: String,
    pub strategy: String,
    pub answer: String,
    pub raw_text: String,
}

impl PredictionRecord {
    pub fn new(sample_id: &str, variant_id: &str, strategy: &str, answer: &str, raw_text: &str) -> Self {
        Self {
            v: 1,
            sample_id: sample_id.into(),
            variant_id: variant_id.into(),
            strategy: strategy.into(),
            answer: answer.into(),
            raw_text: raw_text.into(),
        }
    }
}

/// The evaluation prompt for a question.
pub fn build_prompt(question: &str, question_type: QuestionType, options: Option<&[String]>, yes_no: bool) -> String {
    let question = question.trim();
    match (question_type, options) {
        (QuestionType::Mcq, Some(opts)) => {
            let mut out = format!("Question: {question}\nOptions:\n");
            for (i, o) in opts.iter().enumerate() {
                out.push_str(&format!("{}. {}\n", char::from(b'A' + i as u8), o.trim()));
            }
            out.push_str("Answer with the option's letter from the given choices directly.");
            out
        }
        _ if yes_no => format!("Question: {question}\nPlease answer yes or no."),
        _ => format!("Question: {question}\nAnswer the question using a single word or phrase."),
    }
}

/// Answers of one strategy, keyed by `(sample_id, variant_id)`.
#[derive(Debug, Clone, Default)]
pub struct Predictions {
    answers: HashMap<(String, String), String>,
}

impl Predictions {
    /// Keeps the records tagged `strategy`; a later duplicate replaces an earlier one.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PredictionRecord>, strategy: &str) -> Self {
        let answers = records
            .into_iter()
            .filter(|r| r.strategy == strategy)
            .map(|r| ((r.sample_id.clone(), r.variant_id.clone()), r.answer.clone()))
            .collect();
        Self { answers }
    }

    pub fn insert(&mut self, sample_id: &str, variant_id: &str, answer: &str) {
        self.answers.insert((sample_id.into(), variant_id.into()), answer.into());
    }

    pub fn get(&self, sample_id: &str, variant_id: &str) -> Option<&str> {
        self.answers
            .get(&(sample_id.to_string(), variant_id.to_string()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

/// Members of one subset plus the samples skipped for missing predictions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Membership {
    pub ids: BTreeSet<String>,
    pub incomplete: usize,
}

fn collect_answers<'a>(preds: &'a Predictions, sample: &SampleRecord, ids: &[String]) -> Option<Vec<&'a str>> {
    ids.iter().map(|v| preds.get(&sample.id, v)).collect()
}

/// Samples whose original answer is wrong and shared by all of `V1..Vm`.
pub fn bias_subset(preds: &Predictions, samples: &[SampleRecord], m: usize, aliases: &AnswerAliases) -> Membership {
    let mut out = Membership::default();
    if m == 0 {
        return out;
    }
    let ids: Vec<String> = (1..=m).map(visual_id).collect();
    for s in samples {
        let (Some(orig), Some(vis)) = (preds.get(&s.id, ORIGINAL_ID), collect_answers(preds, s, &ids)) else {
            out.incomplete += 1;
            continue;
        };
        if vis.iter().all(|a| *a == orig) && orig != expected_answer(s, aliases) {
            out.ids.insert(s.id.clone());
        }
    }
    if out.incomplete > 0 {
        log::warn!("bias subset: {} samples lack predictions and were skipped", out.incomplete);
    }
    out
}

/// Samples whose answer differs from the original under every one of `T1..Tn`.
pub fn sensitivity_subset(preds: &Predictions, samples: &[SampleRecord], n: usize) -> Membership {
    let mut out = Membership::default();
    if n == 0 {
        return out;
    }
    let ids: Vec<String> = (1..=n).map(textual_id).collect();
    for s in samples {
        let (Some(orig), Some(txt)) = (preds.get(&s.id, ORIGINAL_ID), collect_answers(preds, s, &ids)) else {
            out.incomplete += 1;
            continue;
        };
        if txt.iter().all(|a| *a != orig) {
            out.ids.insert(s.id.clone());
        }
    }
    if out.incomplete > 0 {
        log::warn!("sensitivity subset: {} samples lack predictions and were skipped", out.incomplete);
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCounts {
    pub bias: usize,
    pub sensitivity: usize,
    pub bs: usize,
    pub overlap: usize,
    pub total: usize,
}

impl SubsetCounts {
    pub fn inclusion_exclusion_holds(&self) -> bool {
        self.bs + self.overlap == self.bias + self.sensitivity
    }

    /// Bias-only, sensitivity-only and overlap shares of the union.
    pub fn proportions(&self) -> Option<(f64, f64, f64)> {
        (self.bs > 0).then(|| {
            let bs = self.bs as f64;
            (
                (self.bias - self.overlap) as f64 / bs,
                (self.sensitivity - self.overlap) as f64 / bs,
                self.overlap as f64 / bs,
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSubsets {
    pub model_tag: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub bias: BTreeSet<String>,
    pub sensitivity: BTreeSet<String>,
    /// Per question type, plus [`OVERALL`].
    pub counts: BTreeMap<String, SubsetCounts>,
    #[serde(default)]
    pub incomplete: usize,
}

impl RobustnessSubsets {
    pub fn bs_union(&self) -> BTreeSet<String> {
        self.bias.union(&self.sensitivity).cloned().collect()
    }

    pub fn overlap(&self) -> BTreeSet<String> {
        self.bias.intersection(&self.sensitivity).cloned().collect()
    }

    pub fn overall(&self) -> SubsetCounts {
        self.counts.get(OVERALL).copied().unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("subsets serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, DrbenchError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Per-type and overall subset sizes over `samples`.
pub fn count_subsets(
    samples: &[SampleRecord],
    bias: &BTreeSet<String>,
    sensitivity: &BTreeSet<String>,
) -> BTreeMap<String, SubsetCounts> {
    let mut counts: BTreeMap<String, SubsetCounts> = BTreeMap::new();
    for s in samples {
        let b = bias.contains(&s.id);
        let t = sensitivity.contains(&s.id);
        for key in [s.question_type.as_str(), OVERALL] {
            let c = counts.entry(key.to_string()).or_default();
            c.total += 1;
            c.bias += b as usize;
            c.sensitivity += t as usize;
            c.bs += (b || t) as usize;
            c.overlap += (b && t) as usize;
        }
    }
    counts
}

/// Builds both subsets from the base-tagged predictions.
pub fn build_subsets(
    preds: &Predictions,
    samples: &[SampleRecord],
    m: usize,
    n: usize,
    model_tag: &str,
    aliases: &AnswerAliases,
) -> RobustnessSubsets {
    let bias = bias_subset(preds, samples, m, aliases);
    let sens = sensitivity_subset(preds, samples, n);
    let counts = count_subsets(samples, &bias.ids, &sens.ids);
    RobustnessSubsets {
        model_tag: model_tag.to_string(),
        m,
        n,
        bias: bias.ids,
        sensitivity: sens.ids,
        counts,
        incomplete: bias.incomplete.max(sens.incomplete),
    }
}

/// Correct/total tally. `accuracy` is `None` for an empty set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: Option<f64>,
}

impl Accuracy {
    fn push(&mut self, correct: bool) {
        self.total += 1;
        self.correct += correct as usize;
        self.accuracy = Some(self.correct as f64 / self.total as f64);
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }
}

impl fmt::Display for Accuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.accuracy {
            Some(a) => write!(f, "{:.2}", 100.0 * a),
            None => f.write_str("empty"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall: Accuracy,
    pub by_type: BTreeMap<String, Accuracy>,
    pub by_dataset: BTreeMap<String, Accuracy>,
    /// Samples with no original-input prediction; scored as wrong.
    pub missing: usize,
    pub unparsed: usize,
}

/// Accuracy of the original-input predictions, restricted to `subset` when given.
pub fn evaluate(
    preds: &Predictions,
    samples: &[SampleRecord],
    subset: Option<&BTreeSet<String>>,
    aliases: &AnswerAliases,
) -> Metrics {
    let mut m = Metrics::default();
    for s in samples.iter().filter(|s| subset.is_none_or(|ids| ids.contains(&s.id))) {
        let correct = match preds.get(&s.id, ORIGINAL_ID) {
            None => {
                m.missing += 1;
                false
            }
            Some(UNPARSED) => {
                m.unparsed += 1;
                false
            }
            Some(a) => a == expected_answer(s, aliases),
        };
        m.overall.push(correct);
        m.by_type.entry(s.question_type.as_str().to_string()).or_default().push(correct);
        m.by_dataset.entry(s.dataset.clone()).or_default().push(correct);
    }
    if m.missing > 0 {
        log::warn!("{} samples had no prediction and were scored as wrong", m.missing);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetOverlap {
    pub left: usize,
    pub right: usize,
    pub intersection: usize,
    pub union: usize,
    pub jaccard: Option<f64>,
    /// Share of `left` also present in `right`.
    pub fraction_of_left: Option<f64>,
}

impl SubsetOverlap {
    pub fn between(left: &BTreeSet<String>, right: &BTreeSet<String>) -> Self {
        let intersection = left.intersection(right).count();
        let union = left.len() + right.len() - intersection;
        Self {
            left: left.len(),
            right: right.len(),
            intersection,
            union,
            jaccard: (union > 0).then(|| intersection as f64 / union as f64),
            fraction_of_left: (!left.is_empty()).then(|| intersection as f64 / left.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossModelReport {
    pub subsets_from: String,
    pub bias: Metrics,
    pub sensitivity: Metrics,
    pub bs: Metrics,
    /// Present when the second model's own subsets are known.
    pub bs_overlap: Option<SubsetOverlap>,
}

/// Scores a second model on subsets built from the first.
pub fn cross_model_report(
    subsets_a: &RobustnessSubsets,
    preds_b: &Predictions,
    samples: &[SampleRecord],
    subsets_b: Option<&RobustnessSubsets>,
    aliases: &AnswerAliases,
) -> CrossModelReport {
    let bs = subsets_a.bs_union();
    CrossModelReport {
        subsets_from: subsets_a.model_tag.clone(),
        bias: evaluate(preds_b, samples, Some(&subsets_a.bias), aliases),
        sensitivity: evaluate(preds_b, samples, Some(&subsets_a.sensitivity), aliases),
        bs: evaluate(preds_b, samples, Some(&bs), aliases),
        bs_overlap: subsets_b.map(|b| SubsetOverlap::between(&bs, &b.bs_union())),
    }
}

/// Seeded split into `(validation, test)`; each side keeps input order.
///
/// The validation side gets `round(fraction * len)` samples.
pub fn split_validation_test(
    samples: &[SampleRecord],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>), DrbenchError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DrbenchError::InvalidFraction(fraction));
    }
    let n_val = split_size(samples.len(), fraction);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_val = vec![false; samples.len()];
    order[..n_val].iter().for_each(|&i| in_val[i] = true);
    let (val, test): (Vec<_>, Vec<_>) = samples.iter().zip(&in_val).partition(|(_, v)| **v);
    Ok((
        val.into_iter().map(|(s, _)| s.clone()).collect(),
        test.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}

pub fn split_size(len: usize, fraction: f64) -> usize {
    ((fraction * len as f64).round() as usize).min(len)
}
