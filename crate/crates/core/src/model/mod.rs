//! Sentence-level bias classifier.
//!
//! Architecture: token embeddings mean-pooled over the real (non-padding)
//! positions, one tanh hidden layer, and a logistic output giving the score
//! of the biased class. Training minimizes binary cross-entropy with Adam.
//!
//! Parameters live in one flat vector so the optimizer, the checksum and the
//! finite-difference check all walk the same memory.

mod baseline;
mod checkpoint;
mod train;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::OverlapReport;
use crate::textprep::EncodedSequence;
use crate::types::Label;

pub use baseline::{baseline_features_train, BaselineConfig, BaselineModel};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use train::{
    encode_examples, pretrain_then_finetune, train_stage, Adam, AdamParams, Stage, TextExample, TrainReport, TrainingConfig,
    TwoStageConfig, TwoStageOutcome,
};

/// Scores are clamped to `[EPS, 1 - EPS]` inside the loss.
pub const SCORE_EPSILON: f64 = 1e-12;
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("empty input")]
    EmptyInput,
    #[error("token id {id} outside a vocabulary of size {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("loss needs at least one example")]
    NoExamples,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("distant and gold corpora overlap on {} sentence pair(s)", .0.collisions.len())]
    Overlap(OverlapReport),
    #[error("model expects vocabulary {expected}, got {actual}")]
    VocabularyMismatch { expected: String, actual: String },
}

/// Binary-labeled encoded sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub encoded: EncodedSequence,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(encoded: EncodedSequence, label: Label) -> Self {
        Self { encoded, label }
    }

    pub fn y(&self) -> f64 {
        self.label.as_binary() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab_size: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl ModelShape {
    pub fn new(vocab_size: usize, dim: usize, hidden: usize) -> Self {
        Self { vocab_size, dim, hidden }
    }

    pub fn embedding(&self) -> Range<usize> {
        0..self.vocab_size * self.dim
    }

    pub fn hidden_weights(&self) -> Range<usize> {
        let start = self.embedding().end;
        start..start + self.dim * self.hidden
    }

    pub fn hidden_bias(&self) -> Range<usize> {
        let start = self.hidden_weights().end;
        start..start + self.hidden
    }

    pub fn output_weights(&self) -> Range<usize> {
        let start = self.hidden_bias().end;
        start..start + self.hidden
    }

    pub fn output_bias(&self) -> usize {
        self.output_weights().end
    }

    pub fn parameter_count(&self) -> usize {
        self.output_bias() + 1
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Activations {
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logit: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    /// Checksum of the vocabulary the embedding rows are indexed by.
    pub vocabulary: String,
    pub shape: ModelShape,
    params: Vec<f64>,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ClassifierModel {
    pub fn zeros(shape: ModelShape, vocabulary: impl Into<String>) -> Self {
        Self {
            vocabulary: vocabulary.into(),
            shape,
            params: vec![0.0; shape.parameter_count()],
        }
    }

    /// Weights uniform in (-0.05, 0.05), biases zero.
    pub fn initialize(shape: ModelShape, vocabulary: impl Into<String>, seed: u64) -> Self {
        let mut model = Self::zeros(shape, vocabulary);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = [shape.embedding(), shape.hidden_weights(), shape.output_weights()];
        for range in weights {
            for p in &mut model.params[range] {
                *p = rng.gen_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        model
    }

    /// Every parameter, biases included, uniform in (-scale, scale).
    pub fn random(shape: ModelShape, vocabulary: impl Into<String>, seed: u64, scale: f64) -> Self {
        let mut model = Self::zeros(shape, vocabulary);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut model.params {
            *p = rng.gen_range(-scale..scale);
        }
        model
    }

    pub fn from_parameters(shape: ModelShape, vocabulary: impl Into<String>, params: Vec<f64>) -> Option<Self> {
        (params.len() == shape.parameter_count()).then(|| Self {
            vocabulary: vocabulary.into(),
            shape,
            params,
        })
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn embedding_row(&self, id: u32) -> &[f64] {
        let d = self.shape.dim;
        let start = id as usize * d;
        &self.params[start..start + d]
    }

    /// Hidden weight from pooled dimension `i` to hidden unit `j`.
    pub fn hidden_weight(&self, i: usize, j: usize) -> f64 {
        self.params[self.shape.hidden_weights().start + i * self.shape.hidden + j]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// SHA-256 over the shape and the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for n in [self.shape.vocab_size, self.shape.dim, self.shape.hidden] {
            hasher.update((n as u64).to_le_bytes());
        }
        for p in &self.params {
            hasher.update(p.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn check_input(&self, encoded: &EncodedSequence) -> Result<(), ModelError> {
        if encoded.length() == 0 {
            return Err(ModelError::EmptyInput);
        }
        if let Some(&id) = encoded.ids.iter().find(|&&id| id as usize >= self.shape.vocab_size) {
            return Err(ModelError::IdOutOfRange {
                id,
                vocab: self.shape.vocab_size,
            });
        }
        Ok(())
    }

    pub fn activations(&self, encoded: &EncodedSequence) -> Result<Activations, ModelError> {
        self.check_input(encoded)?;
        let ModelShape { dim, hidden, .. } = self.shape;
        let mut pooled = vec![0.0; dim];
        for &id in &encoded.ids {
            for (acc, e) in pooled.iter_mut().zip(self.embedding_row(id)) {
                *acc += e;
            }
        }
        let inv = 1.0 / encoded.length() as f64;
        pooled.iter_mut().for_each(|v| *v *= inv);

        let hw = &self.params[self.shape.hidden_weights()];
        let hb = &self.params[self.shape.hidden_bias()];
        let ow = &self.params[self.shape.output_weights()];
        let mut act = hb.to_vec();
        for (i, &x) in pooled.iter().enumerate() {
            let row = &hw[i * hidden..(i + 1) * hidden];
            for (a, w) in act.iter_mut().zip(row) {
                *a += x * w;
            }
        }
        act.iter_mut().for_each(|a| *a = a.tanh());
        let logit = self.params[self.shape.output_bias()] + act.iter().zip(ow).map(|(a, w)| a * w).sum::<f64>();
        Ok(Activations {
            pooled,
            hidden: act,
            logit,
            score: logistic(logit),
        })
    }

    /// Probability of the biased class.
    pub fn forward(&self, encoded: &EncodedSequence) -> Result<f64, ModelError> {
        Ok(self.activations(encoded)?.score)
    }

    /// Accumulates `d(loss)/d(params)` into `grads`, given `d(loss)/d(logit)`.
    pub fn backward(&self, encoded: &EncodedSequence, act: &Activations, d_logit: f64, grads: &mut [f64]) {
        let shape = self.shape;
        let hidden = shape.hidden;
        grads[shape.output_bias()] += d_logit;
        let ow_range = shape.output_weights();
        let mut d_pre = vec![0.0; hidden];
        for j in 0..hidden {
            grads[ow_range.start + j] += d_logit * act.hidden[j];
            let h = act.hidden[j];
            d_pre[j] = d_logit * self.params[ow_range.start + j] * (1.0 - h * h);
        }
        let hb = shape.hidden_bias().start;
        for j in 0..hidden {
            grads[hb + j] += d_pre[j];
        }
        let hw = shape.hidden_weights().start;
        let mut d_pooled = vec![0.0; shape.dim];
        for (i, x) in act.pooled.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..hidden {
                grads[hw + i * hidden + j] += x * d_pre[j];
                acc += self.params[hw + i * hidden + j] * d_pre[j];
            }
            d_pooled[i] = acc;
        }
        let inv = 1.0 / encoded.length() as f64;
        for &id in &encoded.ids {
            let start = id as usize * shape.dim;
            for (g, d) in grads[start..start + shape.dim].iter_mut().zip(&d_pooled) {
                *g += d * inv;
            }
        }
    }

    /// Analytic gradient of the single-example loss.
    pub fn gradient(&self, example: &LabeledExample) -> Result<Vec<f64>, ModelError> {
        let act = self.activations(&example.encoded)?;
        let mut grads = vec![0.0; self.params.len()];
        self.backward(&example.encoded, &act, act.score - example.y(), &mut grads);
        Ok(grads)
    }
}

fn check_lengths(scores: usize, labels: usize) -> Result<(), ModelError> {
    if scores != labels {
        return Err(ModelError::LengthMismatch { scores, labels });
    }
    if scores == 0 {
        return Err(ModelError::NoExamples);
    }
    Ok(())
}

/// Mean binary cross-entropy with scores clamped to `[1e-12, 1 - 1e-12]`.
pub fn loss(scores: &[f64], labels: &[Label]) -> Result<f64, ModelError> {
    weighted_loss(scores, labels, [1.0, 1.0])
}

/// Binary cross-entropy where each example's term is scaled by the weight of its class.
pub fn weighted_loss(scores: &[f64], labels: &[Label], class_weights: [f64; 2]) -> Result<f64, ModelError> {
    check_lengths(scores.len(), labels.len())?;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &label)| {
            let s = s.clamp(SCORE_EPSILON, 1.0 - SCORE_EPSILON);
            let y = label.as_binary() as f64;
            -class_weights[label.as_binary() as usize] * ((1.0 - y) * (1.0 - s).ln() + y * s.ln())
        })
        .sum();
    Ok(total / scores.len() as f64)
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences of the loss, over every parameter.
pub fn gradient_check(model: &ClassifierModel, example: &LabeledExample, epsilon: f64) -> Result<f64, ModelError> {
    let analytic = model.gradient(example)?;
    let mut probe = model.clone();
    let labels = [example.label];
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let original = probe.params[k];
        probe.params[k] = original + epsilon;
        let plus = loss(&[probe.forward(&example.encoded)?], &labels)?;
        probe.params[k] = original - epsilon;
        let minus = loss(&[probe.forward(&example.encoded)?], &labels)?;
        probe.params[k] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
