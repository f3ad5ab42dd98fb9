//! Sentence and outlet store.
//!
//! Sentences arrive as JSONL files tagged with a [`CorpusKind`]. Distant
//! labels are a pure function of the publishing outlet's leaning and
//! journalistic standard, evaluated through an [`OutletRule`]. The overlap
//! guard compares normalized sentence text, since gold and distant corpora
//! come from independent collections and share no id space.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{Label, OutletId, SentenceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Leaning {
    FarLeft,
    Left,
    CenterLeft,
    Center,
    CenterRight,
    Right,
    FarRight,
}

impl Leaning {
    pub const ALL: [Leaning; 7] = [
        Leaning::FarLeft,
        Leaning::Left,
        Leaning::CenterLeft,
        Leaning::Center,
        Leaning::CenterRight,
        Leaning::Right,
        Leaning::FarRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Leaning::FarLeft => "far-left",
            Leaning::Left => "left",
            Leaning::CenterLeft => "center-left",
            Leaning::Center => "center",
            Leaning::CenterRight => "center-right",
            Leaning::Right => "right",
            Leaning::FarRight => "far-right",
        }
    }

    pub fn is_partisan(self) -> bool {
        matches!(self, Leaning::FarLeft | Leaning::Left | Leaning::Right | Leaning::FarRight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JournalisticStandard {
    High,
    Partisan,
}

impl JournalisticStandard {
    pub const ALL: [JournalisticStandard; 2] = [JournalisticStandard::High, JournalisticStandard::Partisan];

    pub fn as_str(self) -> &'static str {
        match self {
            JournalisticStandard::High => "high",
            JournalisticStandard::Partisan => "partisan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outlet {
    pub id: OutletId,
    pub name: String,
    pub leaning: Leaning,
    pub standard: JournalisticStandard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Gold,
    Distant,
    Unlabeled,
}

impl CorpusKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CorpusKind::Gold => "gold",
            CorpusKind::Distant => "distant",
            CorpusKind::Unlabeled => "unlabeled",
        }
    }
}

impl fmt::Display for CorpusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorpusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gold" => Ok(CorpusKind::Gold),
            "distant" => Ok(CorpusKind::Distant),
            "unlabeled" => Ok(CorpusKind::Unlabeled),
            other => Err(format!("unknown corpus kind `{other}`")),
        }
    }
}

/// One line of a corpus JSONL file.
///
/// `label` and `tags` are optional extensions: gold files may carry the
/// expert label, and evaluation sets carry slice tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: SentenceId,
    pub text: String,
    pub outlet: OutletId,
    pub topic: String,
    pub date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: SentenceId,
    pub text: String,
    pub outlet: OutletId,
    pub topic: String,
    pub date: Option<NaiveDate>,
    pub kind: CorpusKind,
    /// Gold label, when known.
    #[serde(default)]
    pub label: Option<Label>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl Sentence {
    pub fn from_record(record: SentenceRecord, kind: CorpusKind) -> Self {
        Self {
            id: record.id,
            text: record.text,
            outlet: record.outlet,
            topic: record.topic,
            date: record.date,
            kind,
            label: record.label,
            tags: record.tags,
        }
    }

    pub fn to_record(&self) -> SentenceRecord {
        SentenceRecord {
            id: self.id.clone(),
            text: self.text.clone(),
            outlet: self.outlet.clone(),
            topic: self.topic.clone(),
            date: self.date,
            label: self.label,
            tags: self.tags.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistantLabel {
    pub sentence_id: SentenceId,
    pub label: Label,
    pub source_rule: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleOutcome {
    Biased,
    Neutral,
    /// Outlets of this configuration are dropped from the distant corpus.
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleEntry {
    pub leaning: Leaning,
    pub standard: JournalisticStandard,
    pub outcome: RuleOutcome,
}

/// Mapping from outlet configuration to distant label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<RuleEntry>", into = "Vec<RuleEntry>")]
pub struct OutletRule {
    entries: BTreeMap<(Leaning, JournalisticStandard), RuleOutcome>,
}

impl From<Vec<RuleEntry>> for OutletRule {
    fn from(entries: Vec<RuleEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| ((e.leaning, e.standard), e.outcome))
                .collect(),
        }
    }
}

impl From<OutletRule> for Vec<RuleEntry> {
    fn from(rule: OutletRule) -> Self {
        rule.entries
            .into_iter()
            .map(|((leaning, standard), outcome)| RuleEntry { leaning, standard, outcome })
            .collect()
    }
}

impl Default for OutletRule {
    /// Partisan leanings are biased regardless of standard; centrist outlets
    /// with high standards are neutral; centrist partisan outlets are excluded.
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        for leaning in Leaning::ALL {
            for standard in JournalisticStandard::ALL {
                let outcome = if leaning.is_partisan() {
                    RuleOutcome::Biased
                } else if standard == JournalisticStandard::High {
                    RuleOutcome::Neutral
                } else {
                    RuleOutcome::Exclude
                };
                entries.insert((leaning, standard), outcome);
            }
        }
        Self { entries }
    }
}

impl OutletRule {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn with(mut self, leaning: Leaning, standard: JournalisticStandard, outcome: RuleOutcome) -> Self {
        self.entries.insert((leaning, standard), outcome);
        self
    }

    pub fn outcome(&self, outlet: &Outlet) -> Option<RuleOutcome> {
        self.entries.get(&(outlet.leaning, outlet.standard)).copied()
    }

    fn describe(outlet: &Outlet, outcome: RuleOutcome) -> String {
        let verdict = match outcome {
            RuleOutcome::Biased => "biased",
            RuleOutcome::Neutral => "neutral",
            RuleOutcome::Exclude => "exclude",
        };
        format!("{}/{} -> {}", outlet.leaning.as_str(), outlet.standard.as_str(), verdict)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistantLabelSummary {
    pub biased: usize,
    pub neutral: usize,
    /// Sentences removed from the distant corpus by an `exclude` rule.
    pub excluded: Vec<SentenceId>,
}

impl DistantLabelSummary {
    pub fn labeled(&self) -> usize {
        self.biased + self.neutral
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Collision {
    pub gold_id: SentenceId,
    pub distant_id: SentenceId,
    pub normalized_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub collisions: Vec<Collision>,
}

impl OverlapReport {
    pub fn is_clean(&self) -> bool {
        self.collisions.is_empty()
    }

    /// Distinct normalized texts involved in collisions.
    pub fn shared_texts(&self) -> BTreeSet<&str> {
        self.collisions.iter().map(|c| c.normalized_text.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Stratify {
    Label,
    Topic,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    /// (train, validation, test)
    pub fractions: [f64; 3],
    #[serde(default)]
    pub stratify_by: Stratify,
}

impl SplitSpec {
    pub fn new(seed: u64, train: f64, validation: f64, test: f64, stratify_by: Stratify) -> Self {
        Self {
            seed,
            fractions: [train, validation, test],
            stratify_by,
        }
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.fractions.iter().any(|f| !f.is_finite() || !(0.0..=1.0).contains(f)) {
            return Err(CorpusError::InvalidSplit(format!(
                "fractions must lie in [0, 1], got {:?}",
                self.fractions
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplit(format!("fractions sum to {sum}, expected 1.0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: BTreeSet<SentenceId>,
    pub validation: BTreeSet<SentenceId>,
    pub test: BTreeSet<SentenceId>,
}

impl Split {
    pub fn sets(&self) -> [&BTreeSet<SentenceId>; 3] {
        [&self.train, &self.validation, &self.test]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const SPLIT_NAMES: [&str; 3] = ["train", "validation", "test"];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record, line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown outlet `{id}`, line {line}")]
    UnknownOutlet { line: usize, id: OutletId },
    #[error("duplicate sentence id `{id}`, line {line}")]
    DuplicateSentence { line: usize, id: SentenceId },
    #[error("empty sentence text, line {line}")]
    EmptyText { line: usize },
    #[error("duplicate outlet id `{0}`")]
    DuplicateOutlet(OutletId),
    #[error("malformed outlet registry, line {line}: {message}")]
    OutletCsv { line: usize, message: String },
    #[error("outlet rule does not cover outlets: {}", join_ids(.0))]
    UncoveredOutlets(Vec<OutletId>),
    #[error("unknown sentence `{0}`")]
    UnknownSentence(SentenceId),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("cannot split an empty {0} corpus")]
    EmptyCorpus(CorpusKind),
    #[error("split leaves the {0} set empty")]
    EmptySplit(&'static str),
}

fn join_ids(ids: &[OutletId]) -> String {
    ids.iter().map(|i| i.as_str()).collect::<Vec<_>>().join(", ")
}

/// Normalization used by the overlap guard: lowercase, punctuation removed,
/// whitespace collapsed to single spaces.
pub fn normalize_for_overlap(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reports every (gold, distant) pair whose normalized texts are equal.
pub fn check_overlap<'a, G, D>(gold: G, distant: D) -> OverlapReport
where
    G: IntoIterator<Item = (&'a SentenceId, &'a str)>,
    D: IntoIterator<Item = (&'a SentenceId, &'a str)>,
{
    let mut by_text: HashMap<String, Vec<&SentenceId>> = HashMap::new();
    for (id, text) in distant {
        by_text.entry(normalize_for_overlap(text)).or_default().push(id);
    }
    let mut collisions = Vec::new();
    for (gold_id, text) in gold {
        let normalized = normalize_for_overlap(text);
        if let Some(ids) = by_text.get(&normalized) {
            for distant_id in ids {
                collisions.push(Collision {
                    gold_id: gold_id.clone(),
                    distant_id: (*distant_id).clone(),
                    normalized_text: normalized.clone(),
                });
            }
        }
    }
    collisions.sort();
    OverlapReport { collisions }
}

/// Single-writer sentence store.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    outlets: BTreeMap<OutletId, Outlet>,
    sentences: BTreeMap<SentenceId, Sentence>,
    distant_labels: BTreeMap<SentenceId, DistantLabel>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_outlet(&mut self, outlet: Outlet) -> Result<(), CorpusError> {
        if self.outlets.contains_key(&outlet.id) {
            return Err(CorpusError::DuplicateOutlet(outlet.id));
        }
        self.outlets.insert(outlet.id.clone(), outlet);
        Ok(())
    }

    /// Loads an outlet registry (`id,name,leaning,standard`). All or nothing.
    pub fn register_outlets_csv<R: Read>(&mut self, reader: R) -> Result<usize, CorpusError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut batch: Vec<Outlet> = Vec::new();
        for (i, row) in rdr.deserialize::<Outlet>().enumerate() {
            let line = i + 2;
            let outlet = row.map_err(|e| CorpusError::OutletCsv { line, message: e.to_string() })?;
            if self.outlets.contains_key(&outlet.id) || batch.iter().any(|o| o.id == outlet.id) {
                return Err(CorpusError::DuplicateOutlet(outlet.id));
            }
            batch.push(outlet);
        }
        let n = batch.len();
        for outlet in batch {
            self.outlets.insert(outlet.id.clone(), outlet);
        }
        Ok(n)
    }

    pub fn register_outlets_path(&mut self, path: &Path) -> Result<usize, CorpusError> {
        self.register_outlets_csv(File::open(path)?)
    }

    pub fn outlet(&self, id: &OutletId) -> Option<&Outlet> {
        self.outlets.get(id)
    }

    pub fn outlets(&self) -> impl Iterator<Item = &Outlet> {
        self.outlets.values()
    }

    pub fn sentence(&self, id: &SentenceId) -> Option<&Sentence> {
        self.sentences.get(id)
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.sentences.values()
    }

    pub fn sentences_of(&self, kind: CorpusKind) -> impl Iterator<Item = &Sentence> {
        self.sentences.values().filter(move |s| s.kind == kind)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn distant_label(&self, id: &SentenceId) -> Option<&DistantLabel> {
        self.distant_labels.get(id)
    }

    pub fn distant_labels(&self) -> impl Iterator<Item = &DistantLabel> {
        self.distant_labels.values()
    }

    /// Gold label if present, else distant label.
    pub fn label_of(&self, id: &SentenceId) -> Option<Label> {
        let sentence = self.sentences.get(id)?;
        sentence
            .label
            .or_else(|| self.distant_labels.get(id).map(|d| d.label))
    }

    pub fn set_gold_label(&mut self, id: &SentenceId, label: Label) -> Result<(), CorpusError> {
        let sentence = self
            .sentences
            .get_mut(id)
            .ok_or_else(|| CorpusError::UnknownSentence(id.clone()))?;
        sentence.label = Some(label);
        Ok(())
    }

    /// Parses a JSONL corpus file and inserts it atomically.
    pub fn ingest_jsonl<R: BufRead>(&mut self, reader: R, kind: CorpusKind) -> Result<usize, CorpusError> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: SentenceRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push((i + 1, record));
        }
        self.insert_numbered(records, kind)
    }

    pub fn ingest_path(&mut self, path: &Path, kind: CorpusKind) -> Result<usize, CorpusError> {
        self.ingest_jsonl(BufReader::new(File::open(path)?), kind)
    }

    /// Inserts records atomically; error line numbers are 1-based positions in `records`.
    pub fn insert_records(&mut self, records: Vec<SentenceRecord>, kind: CorpusKind) -> Result<usize, CorpusError> {
        let numbered = records.into_iter().enumerate().map(|(i, r)| (i + 1, r)).collect();
        self.insert_numbered(numbered, kind)
    }

    fn insert_numbered(&mut self, records: Vec<(usize, SentenceRecord)>, kind: CorpusKind) -> Result<usize, CorpusError> {
        let mut seen = BTreeSet::new();
        for (line, record) in &records {
            if record.text.trim().is_empty() {
                return Err(CorpusError::EmptyText { line: *line });
            }
            if !self.outlets.contains_key(&record.outlet) {
                return Err(CorpusError::UnknownOutlet {
                    line: *line,
                    id: record.outlet.clone(),
                });
            }
            if self.sentences.contains_key(&record.id) || !seen.insert(&record.id) {
                return Err(CorpusError::DuplicateSentence {
                    line: *line,
                    id: record.id.clone(),
                });
            }
        }
        let n = records.len();
        for (_, record) in records {
            let sentence = Sentence::from_record(record, kind);
            self.sentences.insert(sentence.id.clone(), sentence);
        }
        Ok(n)
    }

    /// Recomputes distant labels for every distant sentence from its outlet.
    pub fn assign_distant_labels(&mut self, rule: &OutletRule) -> Result<DistantLabelSummary, CorpusError> {
        let mut uncovered = BTreeSet::new();
        for sentence in self.sentences_of(CorpusKind::Distant) {
            let outlet = &self.outlets[&sentence.outlet];
            if rule.outcome(outlet).is_none() {
                uncovered.insert(outlet.id.clone());
            }
        }
        if !uncovered.is_empty() {
            return Err(CorpusError::UncoveredOutlets(uncovered.into_iter().collect()));
        }

        let mut summary = DistantLabelSummary::default();
        let mut labels = BTreeMap::new();
        for sentence in self.sentences.values().filter(|s| s.kind == CorpusKind::Distant) {
            let outlet = &self.outlets[&sentence.outlet];
            let outcome = rule.outcome(outlet).expect("coverage checked above");
            let label = match outcome {
                RuleOutcome::Biased => Label::Biased,
                RuleOutcome::Neutral => Label::Neutral,
                RuleOutcome::Exclude => {
                    summary.excluded.push(sentence.id.clone());
                    continue;
                }
            };
            match label {
                Label::Biased => summary.biased += 1,
                Label::Neutral => summary.neutral += 1,
            }
            labels.insert(
                sentence.id.clone(),
                DistantLabel {
                    sentence_id: sentence.id.clone(),
                    label,
                    source_rule: OutletRule::describe(outlet, outcome),
                },
            );
        }
        for id in &summary.excluded {
            self.sentences.remove(id);
        }
        self.distant_labels = labels;
        Ok(summary)
    }

    /// Overlap guard between the gold and distant partitions of this store.
    pub fn check_overlap(&self) -> OverlapReport {
        check_overlap(
            self.sentences_of(CorpusKind::Gold).map(|s| (&s.id, s.text.as_str())),
            self.sentences_of(CorpusKind::Distant).map(|s| (&s.id, s.text.as_str())),
        )
    }

    /// Deterministic (seeded) train/validation/test partition of one corpus kind.
    pub fn split(&self, spec: &SplitSpec, kind: CorpusKind) -> Result<Split, CorpusError> {
        spec.validate()?;
        let mut strata: BTreeMap<String, Vec<SentenceId>> = BTreeMap::new();
        for sentence in self.sentences_of(kind) {
            let key = match spec.stratify_by {
                Stratify::None => String::new(),
                Stratify::Topic => sentence.topic.clone(),
                Stratify::Label => match self.label_of(&sentence.id) {
                    Some(label) => label.as_str().to_owned(),
                    None => "unlabeled".to_owned(),
                },
            };
            strata.entry(key).or_default().push(sentence.id.clone());
        }
        if strata.is_empty() {
            return Err(CorpusError::EmptyCorpus(kind));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut sets: [BTreeSet<SentenceId>; 3] = Default::default();
        for (_, mut ids) in strata {
            ids.shuffle(&mut rng);
            let counts = allocate(ids.len(), &spec.fractions);
            let mut rest = ids.into_iter();
            for (set, count) in sets.iter_mut().zip(counts) {
                set.extend(rest.by_ref().take(count));
            }
        }
        for (i, set) in sets.iter().enumerate() {
            if spec.fractions[i] > 0.0 && set.is_empty() {
                return Err(CorpusError::EmptySplit(SPLIT_NAMES[i]));
            }
        }
        let [train, validation, test] = sets;
        Ok(Split { train, validation, test })
    }

    /// Canonical JSON dump of the whole store.
    pub fn dump(&self) -> String {
        serde_json::to_string(self).expect("corpus serializes")
    }

    pub(crate) fn insert_authored(&mut self, sentence: Sentence) {
        self.sentences.insert(sentence.id.clone(), sentence);
    }

    pub(crate) fn ensure_outlet(&mut self, outlet: Outlet) {
        self.outlets.entry(outlet.id.clone()).or_insert(outlet);
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`.
fn allocate(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let raw: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = r.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
