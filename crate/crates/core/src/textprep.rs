//! Tokenization, vocabulary construction and vectorization.
//!
//! The tokenizer is versioned: word-level annotation indices are stored
//! against a tokenizer version, and the same text under the same version
//! always yields the same token list.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::corpus::CorpusKind;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const SPECIALS: usize = 2;

pub const DEFAULT_MIN_FREQUENCY: usize = 2;
pub const DEFAULT_MAX_LENGTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NormalizationForm {
    Nfc,
    Nfkc,
}

/// Whitespace + punctuation-splitting word tokenizer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub version: String,
    pub lowercase: bool,
    pub split_punctuation: bool,
    pub normalization: NormalizationForm,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self {
            version: "wordpunct-1".to_owned(),
            lowercase: true,
            split_punctuation: true,
            normalization: NormalizationForm::Nfkc,
        }
    }
}

fn is_punctuation(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace() && !unicode_normalization::char::is_combining_mark(c)
}

impl Tokenizer {
    /// Applies unicode normalization and case folding.
    pub fn normalize(&self, text: &str) -> String {
        let normalized: String = match self.normalization {
            NormalizationForm::Nfc => text.nfc().collect(),
            NormalizationForm::Nfkc => text.nfkc().collect(),
        };
        if self.lowercase {
            normalized.to_lowercase()
        } else {
            normalized
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let normalized = self.normalize(text);
        let mut tokens = Vec::new();
        let mut current = String::new();
        for c in normalized.chars() {
            if c.is_whitespace() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
            } else if self.split_punctuation && is_punctuation(c) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens
    }

    pub fn token_count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Provenance of a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularySource {
    pub kinds: Vec<CorpusKind>,
    pub min_frequency: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    #[serde(default)]
    built_from: Option<VocabularySource>,
}

/// Dense token-to-id mapping. Id 0 is padding, id 1 is unknown.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    /// Non-special tokens; token `i` has id `i + SPECIALS`.
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    built_from: Option<VocabularySource>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.built_from == other.built_from
    }
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(repr: VocabularyRepr) -> Self {
        let mut vocab = Vocabulary::from_tokens(repr.tokens);
        vocab.built_from = repr.built_from;
        vocab
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(vocab: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: vocab.tokens,
            built_from: vocab.built_from,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VocabularyError {
    #[error("duplicate token `{token}` on line {line}")]
    Duplicate { token: String, line: usize },
    #[error("empty token on line {0}")]
    Empty(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Vocabulary {
    /// Builds a vocabulary from pre-ordered tokens. Duplicates keep their first id.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(tokens.len() + SPECIALS);
        index.insert(PAD_TOKEN.to_owned(), PAD_ID);
        index.insert(UNK_TOKEN.to_owned(), UNK_ID);
        let mut kept = Vec::with_capacity(tokens.len());
        for token in tokens {
            if index.contains_key(&token) {
                continue;
            }
            index.insert(token.clone(), (kept.len() + SPECIALS) as u32);
            kept.push(token);
        }
        Self {
            tokens: kept,
            index,
            built_from: None,
        }
    }

    /// Counts token frequencies over `texts` and keeps tokens seen at least
    /// `min_frequency` times, ordered by (frequency desc, token asc).
    pub fn build<'a, I>(tokenizer: &Tokenizer, texts: I, min_frequency: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let min_frequency = min_frequency.max(1);
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for text in texts {
            any = true;
            for token in tokenizer.tokenize(text) {
                *counts.entry(token).or_default() += 1;
            }
        }
        if !any {
            log::warn!("building vocabulary from an empty corpus; only special tokens present");
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, n)| *n >= min_frequency)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t).collect())
    }

    pub fn with_source(mut self, source: VocabularySource) -> Self {
        self.built_from = Some(source);
        self
    }

    pub fn built_from(&self) -> Option<&VocabularySource> {
        self.built_from.as_ref()
    }

    /// Total size including the two specials.
    pub fn size(&self) -> usize {
        self.tokens.len() + SPECIALS
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        match id {
            PAD_ID => Some(PAD_TOKEN),
            UNK_ID => Some(UNK_TOKEN),
            _ => self.tokens.get(id as usize - SPECIALS).map(String::as_str),
        }
    }

    /// Non-special tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Plain-text form: one non-special token per line, line `i` holds id `i + 2`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for token in &self.tokens {
            let _ = writeln!(out, "{token}");
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> io::Result<()> {
        writer.write_all(self.to_text().as_bytes())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, VocabularyError> {
        let mut tokens = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                return Err(VocabularyError::Empty(i + 1));
            }
            if line == PAD_TOKEN || line == UNK_TOKEN || !seen.insert(line.clone()) {
                return Err(VocabularyError::Duplicate { token: line, line: i + 1 });
            }
            tokens.push(line);
        }
        Ok(Self::from_tokens(tokens))
    }

    /// SHA-256 of the plain-text form, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn encode(&self, tokenizer: &Tokenizer, text: &str, max_length: usize) -> EncodedSequence {
        encode(tokenizer, text, self, max_length)
    }
}

/// Token ids of one sentence, truncated to `max_length` and not padded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub max_length: usize,
}

impl EncodedSequence {
    pub fn new(ids: Vec<u32>, max_length: usize) -> Self {
        let mut ids = ids;
        ids.truncate(max_length);
        Self { ids, max_length }
    }

    /// Number of real (non-padding) positions.
    pub fn length(&self) -> usize {
        self.ids.len()
    }

    /// Ids padded with [`PAD_ID`] up to `max_length`.
    pub fn padded(&self) -> Vec<u32> {
        let mut out = self.ids.clone();
        out.resize(self.max_length, PAD_ID);
        out
    }
}

pub fn encode(tokenizer: &Tokenizer, text: &str, vocab: &Vocabulary, max_length: usize) -> EncodedSequence {
    let max_length = max_length.max(1);
    let ids = tokenizer
        .tokenize(text)
        .iter()
        .take(max_length)
        .map(|t| vocab.id(t))
        .collect();
    EncodedSequence { ids, max_length }
}
