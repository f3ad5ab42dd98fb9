//! Human annotations at sentence and word level, annotator profiles, and
//! majority-vote gold labels.
//!
//! Word-level marks are token indices under the pinned tokenizer version the
//! store was created with.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::textprep::Tokenizer;
use crate::types::{AnnotatorId, Label, SentenceId};

pub const MBIC_HEADER: [&str; 10] = [
    "sentence_id",
    "annotator_id",
    "role",
    "sentence_label",
    "biased_word_indices",
    "age",
    "education",
    "ideology",
    "topic_knowledge",
    "timestamp",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Crowdworker,
    Expert,
    Player,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Crowdworker => "crowdworker",
            Role::Expert => "expert",
            Role::Player => "player",
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crowdworker" => Ok(Role::Crowdworker),
            "expert" => Ok(Role::Expert),
            "player" => Ok(Role::Player),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProfile {
    pub id: AnnotatorId,
    pub role: Role,
    #[serde(default)]
    pub age: Option<u32>,
    #[serde(default)]
    pub education: Option<String>,
    /// Position on an ordinal political-ideology scale.
    #[serde(default)]
    pub ideology: Option<i32>,
    #[serde(default)]
    pub topic_knowledge: Option<String>,
}

impl AnnotatorProfile {
    pub fn new(id: impl Into<AnnotatorId>, role: Role) -> Self {
        Self {
            id: id.into(),
            role,
            age: None,
            education: None,
            ideology: None,
            topic_knowledge: None,
        }
    }

    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.id.as_str().trim().is_empty() {
            return Err(AnnotationError::InvalidProfile("empty annotator id".into()));
        }
        if self.age == Some(0) {
            return Err(AnnotationError::InvalidProfile(format!("annotator `{}` has age 0", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceLabel {
    Biased,
    Neutral,
    Skip,
}

impl SentenceLabel {
    pub fn label(self) -> Option<Label> {
        match self {
            SentenceLabel::Biased => Some(Label::Biased),
            SentenceLabel::Neutral => Some(Label::Neutral),
            SentenceLabel::Skip => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SentenceLabel::Biased => "biased",
            SentenceLabel::Neutral => "neutral",
            SentenceLabel::Skip => "skip",
        }
    }
}

impl From<Label> for SentenceLabel {
    fn from(label: Label) -> Self {
        match label {
            Label::Biased => SentenceLabel::Biased,
            Label::Neutral => SentenceLabel::Neutral,
        }
    }
}

impl FromStr for SentenceLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "biased" => Ok(SentenceLabel::Biased),
            "neutral" => Ok(SentenceLabel::Neutral),
            "skip" => Ok(SentenceLabel::Skip),
            other => Err(format!("unknown sentence label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sentence_id: SentenceId,
    pub annotator_id: AnnotatorId,
    pub sentence_label: SentenceLabel,
    #[serde(default)]
    pub biased_words: Vec<usize>,
    pub timestamp: DateTime<Utc>,
}

/// Key of a stored record; at most one record per (sentence, annotator).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnnotationKey {
    pub sentence_id: SentenceId,
    pub annotator_id: AnnotatorId,
}

impl fmt::Display for AnnotationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.sentence_id, self.annotator_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub sentence_id: SentenceId,
    pub label: Label,
    /// Annotators agreeing with `label`.
    pub support: usize,
    /// Non-skip annotators.
    pub total: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAggregation {
    pub labels: Vec<GoldLabel>,
    pub tied: Vec<SentenceId>,
    pub under_annotated: Vec<SentenceId>,
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("unknown sentence `{0}`")]
    UnknownSentence(SentenceId),
    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(AnnotatorId),
    #[error("biased-word index {index} out of range for a {tokens}-token sentence")]
    WordIndexOutOfRange { index: usize, tokens: usize },
    #[error("biased words given for a `{0}` sentence label")]
    WordsOnUnbiasedLabel(&'static str),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("profile for `{0}` conflicts with the stored profile")]
    ProfileConflict(AnnotatorId),
    #[error("annotations were recorded with tokenizer `{stored}`, got `{given}`")]
    TokenizerMismatch { stored: String, given: String },
    #[error("malformed annotation CSV, line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("annotation CSV, line {line}: {source}")]
    Row {
        line: usize,
        #[source]
        source: Box<AnnotationError>,
    },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Annotation store for one collection round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStore {
    tokenizer_version: String,
    profiles: BTreeMap<AnnotatorId, AnnotatorProfile>,
    records: BTreeMap<SentenceId, BTreeMap<AnnotatorId, AnnotationRecord>>,
}

impl Default for AnnotationStore {
    fn default() -> Self {
        Self::new(&Tokenizer::default())
    }
}

impl AnnotationStore {
    pub fn new(tokenizer: &Tokenizer) -> Self {
        Self {
            tokenizer_version: tokenizer.version.clone(),
            profiles: BTreeMap::new(),
            records: BTreeMap::new(),
        }
    }

    pub fn tokenizer_version(&self) -> &str {
        &self.tokenizer_version
    }

    /// Inserts or replaces a profile.
    pub fn upsert_profile(&mut self, profile: AnnotatorProfile) -> Result<(), AnnotationError> {
        profile.validate()?;
        self.profiles.insert(profile.id.clone(), profile);
        Ok(())
    }

    pub fn profile(&self, id: &AnnotatorId) -> Option<&AnnotatorProfile> {
        self.profiles.get(id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &AnnotatorProfile> {
        self.profiles.values()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records ordered by (sentence id, annotator id).
    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.values().flat_map(BTreeMap::values)
    }

    pub fn records_for(&self, sentence: &SentenceId) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.get(sentence).into_iter().flat_map(BTreeMap::values)
    }

    pub fn record(&self, sentence: &SentenceId, annotator: &AnnotatorId) -> Option<&AnnotationRecord> {
        self.records.get(sentence)?.get(annotator)
    }

    pub fn annotated_sentences(&self) -> impl Iterator<Item = &SentenceId> {
        self.records.keys()
    }

    fn check_tokenizer(&self, tokenizer: &Tokenizer) -> Result<(), AnnotationError> {
        if tokenizer.version != self.tokenizer_version {
            return Err(AnnotationError::TokenizerMismatch {
                stored: self.tokenizer_version.clone(),
                given: tokenizer.version.clone(),
            });
        }
        Ok(())
    }

    /// Checks a record against the store, returning it with sorted, deduplicated word indices.
    pub fn validate(
        &self,
        mut record: AnnotationRecord,
        corpus: &Corpus,
        tokenizer: &Tokenizer,
    ) -> Result<AnnotationRecord, AnnotationError> {
        self.check_tokenizer(tokenizer)?;
        let sentence = corpus
            .sentence(&record.sentence_id)
            .ok_or_else(|| AnnotationError::UnknownSentence(record.sentence_id.clone()))?;
        if !self.profiles.contains_key(&record.annotator_id) {
            return Err(AnnotationError::UnknownAnnotator(record.annotator_id.clone()));
        }
        if record.sentence_label != SentenceLabel::Biased && !record.biased_words.is_empty() {
            return Err(AnnotationError::WordsOnUnbiasedLabel(record.sentence_label.as_str()));
        }
        let tokens = tokenizer.token_count(&sentence.text);
        if let Some(&index) = record.biased_words.iter().find(|&&i| i >= tokens) {
            return Err(AnnotationError::WordIndexOutOfRange { index, tokens });
        }
        record.biased_words.sort_unstable();
        record.biased_words.dedup();
        Ok(record)
    }

    /// Stores a record, replacing any earlier record by the same annotator for the same sentence.
    pub fn submit(
        &mut self,
        record: AnnotationRecord,
        corpus: &Corpus,
        tokenizer: &Tokenizer,
    ) -> Result<AnnotationKey, AnnotationError> {
        let record = self.validate(record, corpus, tokenizer)?;
        let key = AnnotationKey {
            sentence_id: record.sentence_id.clone(),
            annotator_id: record.annotator_id.clone(),
        };
        self.records
            .entry(record.sentence_id.clone())
            .or_default()
            .insert(record.annotator_id.clone(), record);
        Ok(key)
    }

    /// Majority-vote gold labels. Skips are excluded from the denominator;
    /// ties and sentences below `min_annotators` are reported, not labeled.
    pub fn aggregate_gold<'a, I>(&self, sentence_ids: I, min_annotators: usize) -> GoldAggregation
    where
        I: IntoIterator<Item = &'a SentenceId>,
    {
        let min_annotators = min_annotators.max(1);
        let ids: BTreeSet<&SentenceId> = sentence_ids.into_iter().collect();
        let mut out = GoldAggregation::default();
        for id in ids {
            let (mut biased, mut neutral) = (0usize, 0usize);
            for record in self.records_for(id) {
                match record.sentence_label {
                    SentenceLabel::Biased => biased += 1,
                    SentenceLabel::Neutral => neutral += 1,
                    SentenceLabel::Skip => {}
                }
            }
            let total = biased + neutral;
            if total < min_annotators {
                out.under_annotated.push(id.clone());
            } else if biased == neutral {
                out.tied.push(id.clone());
            } else {
                let (label, support) = if biased > neutral {
                    (Label::Biased, biased)
                } else {
                    (Label::Neutral, neutral)
                };
                out.labels.push(GoldLabel {
                    sentence_id: id.clone(),
                    label,
                    support,
                    total,
                });
            }
        }
        out
    }

    /// Per-token count of annotators marking the token as biased.
    pub fn word_label_histogram(
        &self,
        sentence: &SentenceId,
        corpus: &Corpus,
        tokenizer: &Tokenizer,
    ) -> Result<Vec<usize>, AnnotationError> {
        self.check_tokenizer(tokenizer)?;
        let s = corpus
            .sentence(sentence)
            .ok_or_else(|| AnnotationError::UnknownSentence(sentence.clone()))?;
        let mut hist = vec![0usize; tokenizer.token_count(&s.text)];
        for record in self.records_for(sentence) {
            for &i in &record.biased_words {
                if let Some(slot) = hist.get_mut(i) {
                    *slot += 1;
                }
            }
        }
        Ok(hist)
    }

    /// Writes all records in MBIC row shape, sorted by (sentence, annotator).
    pub fn write_mbic_csv<W: Write>(&self, writer: W) -> Result<usize, AnnotationError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let map_csv = |e: csv::Error| AnnotationError::Io(io::Error::other(e));
        wtr.write_record(MBIC_HEADER).map_err(map_csv)?;
        let mut rows = 0;
        for record in self.records() {
            let profile = &self.profiles[&record.annotator_id];
            let words = record
                .biased_words
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(";");
            wtr.write_record([
                record.sentence_id.as_str(),
                record.annotator_id.as_str(),
                profile.role.as_str(),
                record.sentence_label.as_str(),
                &words,
                &profile.age.map(|a| a.to_string()).unwrap_or_default(),
                profile.education.as_deref().unwrap_or(""),
                &profile.ideology.map(|v| v.to_string()).unwrap_or_default(),
                profile.topic_knowledge.as_deref().unwrap_or(""),
                &format_timestamp(&record.timestamp),
            ])
            .map_err(map_csv)?;
            rows += 1;
        }
        wtr.flush()?;
        Ok(rows)
    }

    pub fn export_mbic_style(&self, path: &Path) -> Result<usize, AnnotationError> {
        let file = File::create(path)?;
        self.write_mbic_csv(io::BufWriter::new(file))
    }

    /// Imports an MBIC-style CSV atomically: profiles are created from the row
    /// columns, records validated against `corpus`.
    pub fn import_csv<R: Read>(
        &mut self,
        reader: R,
        corpus: &Corpus,
        tokenizer: &Tokenizer,
    ) -> Result<usize, AnnotationError> {
        let rows = parse_mbic_csv(reader)?;
        let mut staged = self.clone();
        for (line, profile, record) in &rows {
            let wrap = |e: AnnotationError| AnnotationError::Row {
                line: *line,
                source: Box::new(e),
            };
            match staged.profiles.get(&profile.id) {
                Some(existing) if existing != profile => {
                    return Err(wrap(AnnotationError::ProfileConflict(profile.id.clone())));
                }
                Some(_) => {}
                None => staged.upsert_profile(profile.clone()).map_err(wrap)?,
            }
            staged.submit(record.clone(), corpus, tokenizer).map_err(wrap)?;
        }
        *self = staged;
        Ok(rows.len())
    }
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses MBIC-style rows without validating them against any store.
pub fn parse_mbic_csv<R: Read>(reader: R) -> Result<Vec<(usize, AnnotatorProfile, AnnotationRecord)>, AnnotationError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| AnnotationError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().ne(MBIC_HEADER.iter().copied()) {
        return Err(AnnotationError::Csv {
            line: 1,
            message: format!("expected header `{}`", MBIC_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |message: String| AnnotationError::Csv { line, message };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let opt = |k: usize| Some(field(k).to_owned()).filter(|s| !s.is_empty());
        let role: Role = field(2).parse().map_err(bad)?;
        let sentence_label: SentenceLabel = field(3).parse().map_err(bad)?;
        let biased_words = if field(4).is_empty() {
            Vec::new()
        } else {
            field(4)
                .split(';')
                .map(|s| s.trim().parse::<usize>().map_err(|e| bad(format!("word index `{s}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?
        };
        let age = opt(5)
            .map(|s| s.parse::<u32>().map_err(|e| bad(format!("age `{s}`: {e}"))))
            .transpose()?;
        let ideology = opt(7)
            .map(|s| s.parse::<i32>().map_err(|e| bad(format!("ideology `{s}`: {e}"))))
            .transpose()?;
        let timestamp = DateTime::parse_from_rfc3339(field(9))
            .map_err(|e| bad(format!("timestamp `{}`: {e}", field(9))))?
            .with_timezone(&Utc);
        let annotator_id = AnnotatorId::from(field(1));
        let profile = AnnotatorProfile {
            id: annotator_id.clone(),
            role,
            age,
            education: opt(6),
            ideology,
            topic_knowledge: opt(8),
        };
        let record = AnnotationRecord {
            sentence_id: SentenceId::from(field(0)),
            annotator_id,
            sentence_label,
            biased_words,
            timestamp,
        };
        out.push((line, profile, record));
    }
    Ok(out)
}
