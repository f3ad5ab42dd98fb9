//! Flat-text checkpoint format.
//!
//! ```text
//! biaslab-checkpoint 1
//! tokenizer {"version":"wordpunct-1",...}
//! max_length 64
//! vocabulary <sha256 of the vocabulary text>
//! dims <vocab_size> <dim> <hidden>
//! tokens <n>
//! <one token per line>
//! parameters <count>
//! <one f64 per line, row-major: embedding, hidden weights, hidden bias, output weights, output bias>
//! ```
//!
//! Floats are written in shortest round-trip form, so loading reproduces
//! forward outputs bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifierModel, ModelError, ModelShape};
use crate::textprep::{EncodedSequence, Tokenizer, Vocabulary};

pub const CHECKPOINT_MAGIC: &str = "biaslab-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("vocabulary checksum mismatch: header {header}, tokens hash to {actual}")]
    Checksum { header: String, actual: String },
}

/// A trained model bundled with everything needed to score raw text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tokenizer: Tokenizer,
    pub max_length: usize,
    pub vocabulary: Vocabulary,
    pub model: ClassifierModel,
}

impl Checkpoint {
    pub fn new(
        tokenizer: Tokenizer,
        max_length: usize,
        vocabulary: Vocabulary,
        model: ClassifierModel,
    ) -> Result<Self, ModelError> {
        let actual = vocabulary.checksum();
        if model.vocabulary != actual || model.shape.vocab_size != vocabulary.size() {
            return Err(ModelError::VocabularyMismatch {
                expected: model.vocabulary.clone(),
                actual,
            });
        }
        Ok(Self {
            tokenizer,
            max_length,
            vocabulary,
            model,
        })
    }

    pub fn encode(&self, text: &str) -> EncodedSequence {
        self.vocabulary.encode(&self.tokenizer, text, self.max_length)
    }

    pub fn score(&self, text: &str) -> Result<f64, ModelError> {
        self.model.forward(&self.encode(text))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let shape = self.model.shape;
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "tokenizer {}", serde_json::to_string(&self.tokenizer).expect("tokenizer serializes"));
        let _ = writeln!(out, "max_length {}", self.max_length);
        let _ = writeln!(out, "vocabulary {}", self.model.vocabulary);
        let _ = writeln!(out, "dims {} {} {}", shape.vocab_size, shape.dim, shape.hidden);
        let _ = writeln!(out, "tokens {}", self.vocabulary.tokens().len());
        out.push_str(&self.vocabulary.to_text());
        let _ = writeln!(out, "parameters {}", self.model.parameters().len());
        for p in self.model.parameters() {
            let _ = writeln!(out, "{p:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| CheckpointError::Parse {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            })
        };
        let parse_err = |line: usize, message: String| CheckpointError::Parse { line, message };
        fn field<'a>(line: (usize, &'a str), key: &str) -> Result<&'a str, CheckpointError> {
            line.1
                .strip_prefix(key)
                .and_then(|rest| rest.strip_prefix(' '))
                .ok_or_else(|| CheckpointError::Parse {
                    line: line.0,
                    message: format!("expected `{key}`"),
                })
        }
        fn number<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, CheckpointError>
        where
            T::Err: std::fmt::Display,
        {
            s.trim().parse().map_err(|e: T::Err| CheckpointError::Parse {
                line,
                message: format!("`{s}`: {e}"),
            })
        }

        let header = next("header")?;
        let version: u32 = number(header.0, field(header, CHECKPOINT_MAGIC)?)?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let line = next("tokenizer")?;
        let tokenizer: Tokenizer =
            serde_json::from_str(field(line, "tokenizer")?).map_err(|e| parse_err(line.0, e.to_string()))?;
        let line = next("max_length")?;
        let max_length: usize = number(line.0, field(line, "max_length")?)?;
        let line = next("vocabulary")?;
        let vocab_checksum = field(line, "vocabulary")?.to_owned();
        let line = next("dims")?;
        let dims: Vec<usize> = field(line, "dims")?
            .split_whitespace()
            .map(|s| number(line.0, s))
            .collect::<Result<_, _>>()?;
        let [vocab_size, dim, hidden] = dims[..] else {
            return Err(parse_err(line.0, "expected three dimensions".into()));
        };
        let line = next("tokens")?;
        let n_tokens: usize = number(line.0, field(line, "tokens")?)?;
        let mut tokens = String::new();
        for _ in 0..n_tokens {
            tokens.push_str(next("token")?.1);
            tokens.push('\n');
        }
        let vocabulary = Vocabulary::read_from(tokens.as_bytes()).map_err(|e| parse_err(line.0, e.to_string()))?;
        let actual = vocabulary.checksum();
        if actual != vocab_checksum {
            return Err(CheckpointError::Checksum {
                header: vocab_checksum,
                actual,
            });
        }
        let line = next("parameters")?;
        let count: usize = number(line.0, field(line, "parameters")?)?;
        let shape = ModelShape::new(vocab_size, dim, hidden);
        if count != shape.parameter_count() || vocab_size != vocabulary.size() {
            return Err(parse_err(line.0, format!("{count} parameters do not fit dims {dims:?}")));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let (no, s) = next("parameter")?;
            params.push(number::<f64>(no, s)?);
        }
        let model = ClassifierModel::from_parameters(shape, vocab_checksum, params).expect("count checked");
        Ok(Self {
            tokenizer,
            max_length,
            vocabulary,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
