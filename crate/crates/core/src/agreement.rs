//! Inter-annotator agreement: nominal Krippendorff's alpha, Fleiss' kappa
//! and mean pairwise percent agreement.
//!
//! All three statistics work from per-item category counts. Alpha accepts
//! missing cells (only items with at least two ratings are pairable); kappa
//! requires every item to carry the same number of ratings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationRecord;
use crate::types::{AnnotatorId, Label, SentenceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    KrippendorffAlphaNominal,
    FleissKappa,
    PercentAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub statistic: Statistic,
    pub value: f64,
    pub n_items: usize,
    pub n_raters: usize,
    pub pairable_values: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgreementError {
    #[error("matrix has {rows} rows of cells for {items} items / {raters} raters")]
    DimensionMismatch { items: usize, raters: usize, rows: usize },
    #[error("reliability matrix has no ratings")]
    Empty,
    #[error("undefined agreement: {0}")]
    Undefined(&'static str),
    #[error("items carry unequal rating counts ({0} vs {1}); use Krippendorff's alpha for incomplete data")]
    UnequalRatingCounts(usize, usize),
}

/// Item × rater grid of nominal ratings; `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityMatrix {
    items: Vec<SentenceId>,
    raters: Vec<AnnotatorId>,
    cells: Vec<Vec<Option<Label>>>,
}

impl ReliabilityMatrix {
    pub fn new(
        items: Vec<SentenceId>,
        raters: Vec<AnnotatorId>,
        cells: Vec<Vec<Option<Label>>>,
    ) -> Result<Self, AgreementError> {
        if cells.len() != items.len() || cells.iter().any(|row| row.len() != raters.len()) {
            return Err(AgreementError::DimensionMismatch {
                items: items.len(),
                raters: raters.len(),
                rows: cells.len(),
            });
        }
        if !cells.iter().flatten().any(Option::is_some) {
            return Err(AgreementError::Empty);
        }
        Ok(Self { items, raters, cells })
    }

    /// Builds a matrix from anonymous rows; items and raters get positional ids.
    pub fn from_rows(cells: Vec<Vec<Option<Label>>>) -> Result<Self, AgreementError> {
        let raters = cells.first().map_or(0, Vec::len);
        let items = (0..cells.len()).map(|i| SentenceId::new(format!("item-{i}"))).collect();
        let raters = (0..raters).map(|r| AnnotatorId::new(format!("rater-{r}"))).collect();
        Self::new(items, raters, cells)
    }

    /// Items and raters sorted by id; `skip` verdicts become missing cells.
    pub fn from_records<'a, I>(records: I) -> Result<Self, AgreementError>
    where
        I: IntoIterator<Item = &'a AnnotationRecord>,
    {
        let mut grid: BTreeMap<&SentenceId, BTreeMap<&AnnotatorId, Option<Label>>> = BTreeMap::new();
        let mut raters = std::collections::BTreeSet::new();
        for r in records {
            raters.insert(&r.annotator_id);
            grid.entry(&r.sentence_id)
                .or_default()
                .insert(&r.annotator_id, r.sentence_label.label());
        }
        let raters: Vec<&AnnotatorId> = raters.into_iter().collect();
        let mut items = Vec::with_capacity(grid.len());
        let mut cells = Vec::with_capacity(grid.len());
        for (item, row) in grid {
            items.push(item.clone());
            cells.push(raters.iter().map(|r| row.get(r).copied().flatten()).collect());
        }
        Self::new(items, raters.into_iter().cloned().collect(), cells)
    }

    pub fn items(&self) -> &[SentenceId] {
        &self.items
    }

    pub fn raters(&self) -> &[AnnotatorId] {
        &self.raters
    }

    pub fn cells(&self) -> &[Vec<Option<Label>>] {
        &self.cells
    }

    /// Per-item counts of (neutral, biased) ratings.
    fn counts(&self) -> Vec<[usize; 2]> {
        self.cells
            .iter()
            .map(|row| {
                let mut c = [0usize; 2];
                for label in row.iter().flatten() {
                    c[label.as_binary() as usize] += 1;
                }
                c
            })
            .collect()
    }

    fn report(&self, statistic: Statistic, value: f64) -> AgreementReport {
        let pairable_values = self
            .counts()
            .iter()
            .map(|c| c[0] + c[1])
            .filter(|&m| m >= 2)
            .sum();
        AgreementReport {
            statistic,
            value,
            n_items: self.items.len(),
            n_raters: self.raters.len(),
            pairable_values,
        }
    }
}

/// Nominal Krippendorff's alpha, `1 - D_o / D_e`, over pairable values.
pub fn krippendorff_alpha(matrix: &ReliabilityMatrix) -> Result<AgreementReport, AgreementError> {
    // Coincidences between the two categories, and pairable marginals.
    let mut disagreement = 0.0f64;
    let mut marginals = [0usize; 2];
    for c in matrix.counts() {
        let m = c[0] + c[1];
        if m < 2 {
            continue;
        }
        disagreement += 2.0 * (c[0] * c[1]) as f64 / (m - 1) as f64;
        marginals[0] += c[0];
        marginals[1] += c[1];
    }
    let n = marginals[0] + marginals[1];
    if n == 0 {
        return Err(AgreementError::Undefined("no pairable values"));
    }
    let expected = 2.0 * (marginals[0] * marginals[1]) as f64;
    if expected == 0.0 {
        return Err(AgreementError::Undefined("only one category among pairable values"));
    }
    let alpha = 1.0 - (n - 1) as f64 * disagreement / expected;
    Ok(matrix.report(Statistic::KrippendorffAlphaNominal, alpha))
}

/// Fleiss' kappa, `(P̄ - P̄e) / (1 - P̄e)`; requires equal rating counts per item.
pub fn fleiss_kappa(matrix: &ReliabilityMatrix) -> Result<AgreementReport, AgreementError> {
    let counts = matrix.counts();
    let m = counts[0][0] + counts[0][1];
    for c in &counts {
        let mi = c[0] + c[1];
        if mi != m {
            return Err(AgreementError::UnequalRatingCounts(m, mi));
        }
    }
    if m < 2 {
        return Err(AgreementError::Undefined("fewer than two ratings per item"));
    }
    let items = counts.len();
    let mut totals = [0usize; 2];
    let mut p_sum = 0.0;
    for c in &counts {
        totals[0] += c[0];
        totals[1] += c[1];
        let same = c[0] * c[0] + c[1] * c[1] - m;
        p_sum += same as f64 / (m * (m - 1)) as f64;
    }
    let total = items * m;
    if totals.contains(&total) {
        return Err(AgreementError::Undefined("a single category was used (expected agreement is 1)"));
    }
    let p_bar = p_sum / items as f64;
    let p_e: f64 = totals
        .iter()
        .map(|&t| {
            let p = t as f64 / total as f64;
            p * p
        })
        .sum();
    let kappa = (p_bar - p_e) / (1.0 - p_e);
    Ok(matrix.report(Statistic::FleissKappa, kappa))
}

/// Mean over multiply-rated items of the share of agreeing rater pairs.
pub fn percent_agreement(matrix: &ReliabilityMatrix) -> Result<AgreementReport, AgreementError> {
    let mut sum = 0.0;
    let mut rated = 0usize;
    for c in matrix.counts() {
        let m = c[0] + c[1];
        if m < 2 {
            continue;
        }
        let agreeing = c[0] * c[0].saturating_sub(1) + c[1] * c[1].saturating_sub(1);
        sum += agreeing as f64 / (m * (m - 1)) as f64;
        rated += 1;
    }
    if rated == 0 {
        return Err(AgreementError::Undefined("no item has two or more ratings"));
    }
    Ok(matrix.report(Statistic::PercentAgreement, sum / rated as f64))
}

pub fn compute(statistic: Statistic, matrix: &ReliabilityMatrix) -> Result<AgreementReport, AgreementError> {
    match statistic {
        Statistic::KrippendorffAlphaNominal => krippendorff_alpha(matrix),
        Statistic::FleissKappa => fleiss_kappa(matrix),
        Statistic::PercentAgreement => percent_agreement(matrix),
    }
}
