//! Standard classification metrics and sliced (per-suite) evaluation.
//!
//! Undefined cells (precision with no positive predictions, recall with no
//! positive labels, AUC on a single class) are `None`, never zero.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{ClassifierModel, ModelError};
use crate::textprep::EncodedSequence;
use crate::types::{Label, SentenceId};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum EvaluationError {
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no examples to evaluate")]
    Empty,
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("AUC undefined: labels contain a single class")]
    SingleClass,
    #[error("suite `{suite}` references `{id}`, which is not in the test set")]
    UnknownExample { suite: String, id: SentenceId },
    #[error("reports cover different datasets: {0:?}")]
    MixedDatasets(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub neutral: usize,
    pub biased: usize,
}

impl Support {
    pub fn total(&self) -> usize {
        self.neutral + self.biased
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub support: Support,
    pub confusion: Confusion,
}

impl MetricBundle {
    /// Metrics at `threshold` (score ≥ threshold predicts biased). AUC is
    /// `None` when only one class is present. Inputs must be non-empty and of
    /// equal length.
    pub fn from_scores(scores: &[f64], labels: &[Label], threshold: f64) -> Self {
        debug_assert_eq!(scores.len(), labels.len());
        let mut c = Confusion::default();
        let mut support = Support::default();
        for (&s, &label) in scores.iter().zip(labels) {
            let predicted = s >= threshold;
            match (label, predicted) {
                (Label::Biased, true) => c.tp += 1,
                (Label::Biased, false) => c.fn_ += 1,
                (Label::Neutral, true) => c.fp += 1,
                (Label::Neutral, false) => c.tn += 1,
            }
            match label {
                Label::Biased => support.biased += 1,
                Label::Neutral => support.neutral += 1,
            }
        }
        let n = scores.len() as f64;
        let precision = (c.tp + c.fp > 0).then(|| c.tp as f64 / (c.tp + c.fp) as f64);
        let recall = (c.tp + c.fn_ > 0).then(|| c.tp as f64 / (c.tp + c.fn_) as f64);
        let f1 = match (precision, recall) {
            (Some(_), Some(_)) => Some(2.0 * c.tp as f64 / (2 * c.tp + c.fp + c.fn_) as f64),
            _ => None,
        };
        Self {
            threshold,
            accuracy: (c.tp + c.tn) as f64 / n,
            precision,
            recall,
            f1,
            auc: auc(scores, labels),
            support,
            confusion: c,
        }
    }

    /// F1 with the undefined case counted as zero, for averaging across runs.
    pub fn f1_or_zero(&self) -> f64 {
        self.f1.unwrap_or(0.0)
    }
}

/// Mann–Whitney AUC: probability that a random positive outscores a random
/// negative, ties counting one half. `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[Label]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l == Label::Biased).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, using mid-ranks for ties (1-based).
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == Label::Biased).count() as u128;
        rank_sum2 += mid2 * pos_in_group;
        i = j + 1;
    }
    let p = positives as u128;
    let u2 = rank_sum2 - p * (p + 1);
    Some(u2 as f64 / (2 * p * negatives as u128) as f64)
}

/// Strict metrics: rejects empty or mismatched input, thresholds outside
/// (0, 1), and single-class label lists.
pub fn compute_metrics(scores: &[f64], labels: &[Label], threshold: f64) -> Result<MetricBundle, EvaluationError> {
    if scores.len() != labels.len() {
        return Err(EvaluationError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvaluationError::Empty);
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(EvaluationError::Threshold(threshold));
    }
    let bundle = MetricBundle::from_scores(scores, labels, threshold);
    if bundle.auc.is_none() {
        return Err(EvaluationError::SingleClass);
    }
    Ok(bundle)
}

/// A test example carrying its slice tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: SentenceId,
    pub encoded: EncodedSequence,
    pub label: Label,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlicePredicate {
    /// Examples whose metadata tags contain this tag.
    Tag(String),
    /// An explicit list of test-set sentence ids.
    Ids(BTreeSet<SentenceId>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSuite {
    pub name: String,
    pub predicate: SlicePredicate,
}

impl SliceSuite {
    pub fn tagged(name: impl Into<String>, tag: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            predicate: SlicePredicate::Tag(tag.into()),
        }
    }

    pub fn ids<I: IntoIterator<Item = SentenceId>>(name: impl Into<String>, ids: I) -> Self {
        Self {
            name: name.into(),
            predicate: SlicePredicate::Ids(ids.into_iter().collect()),
        }
    }

    fn members(&self, test: &[EvalExample]) -> Result<Vec<usize>, EvaluationError> {
        match &self.predicate {
            SlicePredicate::Tag(tag) => Ok((0..test.len()).filter(|&i| test[i].tags.contains(tag)).collect()),
            SlicePredicate::Ids(ids) => {
                let positions: BTreeMap<&SentenceId, usize> = test.iter().enumerate().map(|(i, e)| (&e.id, i)).collect();
                ids.iter()
                    .map(|id| {
                        positions.get(id).copied().ok_or_else(|| EvaluationError::UnknownExample {
                            suite: self.name.clone(),
                            id: id.clone(),
                        })
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum SliceOutcome {
    Evaluated { metrics: MetricBundle },
    Skipped { reason: String },
}

impl SliceOutcome {
    pub fn metrics(&self) -> Option<&MetricBundle> {
        match self {
            SliceOutcome::Evaluated { metrics } => Some(metrics),
            SliceOutcome::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model_id: String,
    pub dataset_id: String,
    pub overall: MetricBundle,
    pub slices: BTreeMap<String, SliceOutcome>,
}

/// Sliced evaluation from precomputed scores (one per test example).
pub fn evaluate_scores(
    model_id: &str,
    dataset_id: &str,
    scores: &[f64],
    suites: &[SliceSuite],
    test: &[EvalExample],
    threshold: f64,
) -> Result<EvaluationReport, EvaluationError> {
    if scores.len() != test.len() {
        return Err(EvaluationError::LengthMismatch {
            scores: scores.len(),
            labels: test.len(),
        });
    }
    if test.is_empty() {
        return Err(EvaluationError::Empty);
    }
    let labels: Vec<Label> = test.iter().map(|e| e.label).collect();
    let overall = MetricBundle::from_scores(scores, &labels, threshold);
    let mut slices = BTreeMap::new();
    for suite in suites {
        let members = suite.members(test)?;
        let outcome = if members.is_empty() {
            SliceOutcome::Skipped {
                reason: "empty suite".into(),
            }
        } else {
            let s: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
            let l: Vec<Label> = members.iter().map(|&i| labels[i]).collect();
            SliceOutcome::Evaluated {
                metrics: MetricBundle::from_scores(&s, &l, threshold),
            }
        };
        slices.insert(suite.name.clone(), outcome);
    }
    Ok(EvaluationReport {
        model_id: model_id.to_owned(),
        dataset_id: dataset_id.to_owned(),
        overall,
        slices,
    })
}

/// Scores the whole test set with `model` and reports overall and per-suite metrics.
pub fn evaluate_sliced(
    model: &ClassifierModel,
    suites: &[SliceSuite],
    test: &[EvalExample],
    dataset_id: &str,
) -> Result<EvaluationReport, EvaluationError> {
    let scores = test
        .iter()
        .map(|e| model.forward(&e.encoded))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_scores(&model.checksum(), dataset_id, &scores, suites, test, DEFAULT_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_id: String,
    pub accuracy: f64,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub slice_f1: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub dataset_id: String,
    pub slices: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Side-by-side table sorted by overall F1 (descending, undefined last), ties by model id.
pub fn compare_models(reports: &[EvaluationReport]) -> Result<ComparisonTable, EvaluationError> {
    let datasets: BTreeSet<&str> = reports.iter().map(|r| r.dataset_id.as_str()).collect();
    if datasets.len() > 1 {
        return Err(EvaluationError::MixedDatasets(datasets.into_iter().map(str::to_owned).collect()));
    }
    let slices: BTreeSet<String> = reports.iter().flat_map(|r| r.slices.keys().cloned()).collect();
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            model_id: r.model_id.clone(),
            accuracy: r.overall.accuracy,
            f1: r.overall.f1,
            auc: r.overall.auc,
            slice_f1: slices
                .iter()
                .map(|s| (s.clone(), r.slices.get(s).and_then(SliceOutcome::metrics).and_then(|m| m.f1)))
                .collect(),
        })
        .collect();
    rows.sort_by(|a, b| {
        let fa = a.f1.unwrap_or(f64::NEG_INFINITY);
        let fb = b.f1.unwrap_or(f64::NEG_INFINITY);
        fb.total_cmp(&fa).then_with(|| a.model_id.cmp(&b.model_id))
    });
    Ok(ComparisonTable {
        dataset_id: datasets.into_iter().next().unwrap_or_default().to_owned(),
        slices: slices.into_iter().collect(),
        rows,
    })
}

impl ComparisonTable {
    pub fn render(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"));
        let mut out = String::new();
        let _ = write!(out, "{:<20} {:>8} {:>8} {:>8}", "model", "acc", "f1", "auc");
        for s in &self.slices {
            let _ = write!(out, " {:>12}", format!("f1[{s}]"));
        }
        out.push('\n');
        for row in &self.rows {
            let id: String = row.model_id.chars().take(20).collect();
            let _ = write!(out, "{:<20} {:>8.4} {:>8} {:>8}", id, row.accuracy, cell(row.f1), cell(row.auc));
            for s in &self.slices {
                let _ = write!(out, " {:>12}", cell(row.slice_f1.get(s).copied().flatten()));
            }
            out.push('\n');
        }
        out
    }
}
