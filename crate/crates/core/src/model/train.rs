//! Mini-batch Adam training and the distant-pretrain / gold-finetune regime.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss, ClassifierModel, LabeledExample, ModelError, ModelShape};
use crate::corpus::{check_overlap, CorpusKind};
use crate::evaluation::MetricBundle;
use crate::textprep::{Tokenizer, Vocabulary, VocabularySource, DEFAULT_MAX_LENGTH, DEFAULT_MIN_FREQUENCY};
use crate::types::{Label, SentenceId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    DistantPretrain,
    GoldFinetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamParams,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[serde(default)]
    pub early_stop_patience: usize,
    /// Per-class loss weights (neutral, biased).
    #[serde(default)]
    pub class_weights: Option<[f64; 2]>,
    #[serde(default)]
    pub freeze_embeddings: bool,
}

impl TrainingConfig {
    pub fn distant_pretrain() -> Self {
        Self {
            stage: Stage::DistantPretrain,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-2,
            seed: 0,
            adam: AdamParams::default(),
            early_stop_patience: 0,
            class_weights: None,
            freeze_embeddings: false,
        }
    }

    /// Full fine-tune at a tenth of the pretraining learning rate.
    pub fn gold_finetune() -> Self {
        Self {
            stage: Stage::GoldFinetune,
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            early_stop_patience: 5,
            ..Self::distant_pretrain()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        for (name, beta) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {beta}"));
            }
        }
        if self.adam.epsilon.is_nan() || self.adam.epsilon <= 0.0 {
            return bad("adam epsilon must be positive".into());
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!("class weights must be positive, got {w:?}"));
            }
        }
        Ok(())
    }
}

/// Adam moment estimates over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One bias-corrected update; parameters before `skip_below` are left untouched.
    pub fn step(&mut self, weights: &mut [f64], grads: &[f64], lr: f64, skip_below: usize) {
        self.t += 1;
        let AdamParams { beta1, beta2, epsilon } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for k in skip_below..weights.len() {
            let g = grads[k];
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * g;
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            weights[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    /// Mean training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub validation: Option<MetricBundle>,
    pub checksum: String,
    pub stopped_early: bool,
}

fn mean_loss(model: &ClassifierModel, data: &[LabeledExample]) -> Result<f64, ModelError> {
    let scores = data
        .iter()
        .map(|ex| model.forward(&ex.encoded))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<Label> = data.iter().map(|ex| ex.label).collect();
    loss(&scores, &labels)
}

/// Trains `model` in place. Deterministic given the config seed.
pub fn train_stage(
    model: &mut ClassifierModel,
    data: &[LabeledExample],
    validation: Option<&[LabeledExample]>,
    config: &TrainingConfig,
) -> Result<TrainReport, ModelError> {
    config.validate()?;
    if data.is_empty() {
        return Err(ModelError::NoExamples);
    }
    for ex in data.iter().chain(validation.unwrap_or_default()) {
        model.activations(&ex.encoded)?;
    }
    let validation = validation.filter(|v| !v.is_empty());
    let weights = config.class_weights.unwrap_or([1.0, 1.0]);
    let skip_below = if config.freeze_embeddings {
        model.shape.embedding().end
    } else {
        0
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut adam = Adam::new(model.parameters().len(), config.adam);
    let mut grads = vec![0.0; model.parameters().len()];
    let mut report = TrainReport {
        stage: config.stage,
        epoch_losses: Vec::with_capacity(config.epochs),
        validation_losses: Vec::new(),
        validation: None,
        checksum: String::new(),
        stopped_early: false,
    };
    let mut best = f64::INFINITY;
    let mut since_best = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_total = 0.0;
            for &i in batch {
                let ex = &data[i];
                let act = model.activations(&ex.encoded)?;
                let w = weights[ex.label.as_binary() as usize];
                batch_total += w * loss(&[act.score], &[ex.label])?;
                model.backward(&ex.encoded, &act, w * (act.score - ex.y()) * scale, &mut grads);
            }
            if !batch_total.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: batch_no });
            }
            epoch_total += batch_total;
            adam.step(model.parameters_mut(), &grads, config.learning_rate, skip_below);
        }
        report.epoch_losses.push(epoch_total / data.len() as f64);

        if let Some(val) = validation {
            let val_loss = mean_loss(model, val)?;
            report.validation_losses.push(val_loss);
            if val_loss < best {
                best = val_loss;
                since_best = 0;
            } else {
                since_best += 1;
                if config.early_stop_patience > 0 && since_best >= config.early_stop_patience {
                    log::debug!("early stop at epoch {epoch} (best validation loss {best:.6})");
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }

    if let Some(val) = validation {
        let scores = val
            .iter()
            .map(|ex| model.forward(&ex.encoded))
            .collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<Label> = val.iter().map(|ex| ex.label).collect();
        report.validation = Some(MetricBundle::from_scores(&scores, &labels, 0.5));
    }
    report.checksum = model.checksum();
    Ok(report)
}

/// Raw text with a binary label, before vocabulary construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub id: SentenceId,
    pub text: String,
    pub label: Label,
}

impl TextExample {
    pub fn new(id: impl Into<SentenceId>, text: impl Into<String>, label: Label) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    pub dim: usize,
    pub hidden: usize,
    pub min_frequency: usize,
    pub max_length: usize,
    pub init_seed: u64,
    pub distant: TrainingConfig,
    pub gold: TrainingConfig,
}

impl Default for TwoStageConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            hidden: 16,
            min_frequency: DEFAULT_MIN_FREQUENCY,
            max_length: DEFAULT_MAX_LENGTH,
            init_seed: 0,
            distant: TrainingConfig::distant_pretrain(),
            gold: TrainingConfig::gold_finetune(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageOutcome {
    pub model: ClassifierModel,
    pub vocabulary: Vocabulary,
    pub distant_report: TrainReport,
    pub gold_report: TrainReport,
}

pub fn encode_examples(
    tokenizer: &Tokenizer,
    vocabulary: &Vocabulary,
    examples: &[TextExample],
    max_length: usize,
) -> Vec<LabeledExample> {
    examples
        .iter()
        .map(|ex| LabeledExample::new(vocabulary.encode(tokenizer, &ex.text, max_length), ex.label))
        .collect()
}

/// Distant pretraining from a seeded init, then full fine-tuning on gold labels.
///
/// Refuses to train when any distant text normalizes to a gold (train or
/// validation) text.
pub fn pretrain_then_finetune(
    tokenizer: &Tokenizer,
    distant: &[TextExample],
    gold: &[TextExample],
    gold_validation: Option<&[TextExample]>,
    config: &TwoStageConfig,
) -> Result<TwoStageOutcome, ModelError> {
    let guarded = gold.iter().chain(gold_validation.unwrap_or_default());
    let overlap = check_overlap(
        guarded.map(|e| (&e.id, e.text.as_str())),
        distant.iter().map(|e| (&e.id, e.text.as_str())),
    );
    if !overlap.is_clean() {
        return Err(ModelError::Overlap(overlap));
    }
    config.distant.validate()?;
    config.gold.validate()?;

    let vocabulary = Vocabulary::build(
        tokenizer,
        distant.iter().chain(gold).map(|e| e.text.as_str()),
        config.min_frequency,
    )
    .with_source(VocabularySource {
        kinds: vec![CorpusKind::Distant, CorpusKind::Gold],
        min_frequency: config.min_frequency,
    });
    let shape = ModelShape::new(vocabulary.size(), config.dim, config.hidden);
    let mut model = ClassifierModel::initialize(shape, vocabulary.checksum(), config.init_seed);

    let distant_encoded = encode_examples(tokenizer, &vocabulary, distant, config.max_length);
    let gold_encoded = encode_examples(tokenizer, &vocabulary, gold, config.max_length);
    let val_encoded = gold_validation.map(|v| encode_examples(tokenizer, &vocabulary, v, config.max_length));

    let distant_report = if distant_encoded.is_empty() || config.distant.epochs == 0 {
        config.distant.validate()?;
        TrainReport {
            stage: Stage::DistantPretrain,
            epoch_losses: Vec::new(),
            validation_losses: Vec::new(),
            validation: None,
            checksum: model.checksum(),
            stopped_early: false,
        }
    } else {
        train_stage(&mut model, &distant_encoded, None, &config.distant)?
    };
    let gold_report = train_stage(&mut model, &gold_encoded, val_encoded.as_deref(), &config.gold)?;
    Ok(TwoStageOutcome {
        model,
        vocabulary,
        distant_report,
        gold_report,
    })
}
