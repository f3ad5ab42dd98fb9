//! Feature-based comparison floor: logistic regression over bag-of-words
//! counts plus the number of lexicon hits, trained with the same Adam
//! optimizer as the neural classifier.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{Adam, AdamParams, TextExample};
use super::{logistic, ModelError};
use crate::evaluation::MetricBundle;
use crate::textprep::{Tokenizer, Vocabulary, SPECIALS};
use crate::types::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamParams,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 5e-2,
            seed: 0,
            adam: AdamParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub tokenizer: Tokenizer,
    pub vocabulary: Vocabulary,
    pub lexicon: BTreeSet<String>,
    /// One weight per vocabulary id, then the lexicon-hit weight, then the bias.
    pub weights: Vec<f64>,
}

/// Sparse feature vector: (index, value) pairs.
type Features = Vec<(usize, f64)>;

impl BaselineModel {
    fn lexicon_index(&self) -> usize {
        self.vocabulary.size()
    }

    fn bias_index(&self) -> usize {
        self.vocabulary.size() + 1
    }

    fn features(&self, text: &str) -> Features {
        let tokens = self.tokenizer.tokenize(text);
        let mut counts = std::collections::BTreeMap::new();
        let mut hits = 0usize;
        for token in &tokens {
            let id = self.vocabulary.id(token) as usize;
            if id >= SPECIALS {
                *counts.entry(id).or_insert(0.0) += 1.0;
            }
            if self.lexicon.contains(token) {
                hits += 1;
            }
        }
        let mut out: Features = counts.into_iter().collect();
        if hits > 0 {
            out.push((self.lexicon_index(), hits as f64));
        }
        out.push((self.bias_index(), 1.0));
        out
    }

    fn score_features(&self, features: &Features) -> f64 {
        logistic(features.iter().map(|&(i, v)| self.weights[i] * v).sum())
    }

    pub fn score(&self, text: &str) -> f64 {
        self.score_features(&self.features(text))
    }

    pub fn lexicon_weight(&self) -> f64 {
        self.weights[self.lexicon_index()]
    }
}

/// Trains the baseline on gold examples; returns it with its training-set metrics.
pub fn baseline_features_train(
    tokenizer: &Tokenizer,
    gold: &[TextExample],
    lexicon: &[String],
    config: &BaselineConfig,
) -> Result<(BaselineModel, MetricBundle), ModelError> {
    if gold.is_empty() {
        return Err(ModelError::NoExamples);
    }
    if config.learning_rate.is_nan() || config.learning_rate <= 0.0 || config.batch_size == 0 {
        return Err(ModelError::InvalidConfig("baseline needs a positive learning rate and batch size".into()));
    }
    let vocabulary = Vocabulary::build(tokenizer, gold.iter().map(|e| e.text.as_str()), 1);
    let lexicon: BTreeSet<String> = lexicon
        .iter()
        .flat_map(|w| tokenizer.tokenize(w))
        .collect();
    let mut model = BaselineModel {
        tokenizer: tokenizer.clone(),
        weights: vec![0.0; vocabulary.size() + 2],
        vocabulary,
        lexicon,
    };
    let features: Vec<Features> = gold.iter().map(|e| model.features(&e.text)).collect();
    let mut adam = Adam::new(model.weights.len(), config.adam);
    let mut grads = vec![0.0; model.weights.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..gold.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let residual = model.score_features(&features[i]) - gold[i].label.as_binary() as f64;
                for &(k, v) in &features[i] {
                    grads[k] += residual * v * scale;
                }
            }
            adam.step(&mut model.weights, &grads, config.learning_rate, 0);
        }
    }
    let scores: Vec<f64> = features.iter().map(|f| model.score_features(f)).collect();
    let labels: Vec<Label> = gold.iter().map(|e| e.label).collect();
    let metrics = MetricBundle::from_scores(&scores, &labels, 0.5);
    Ok((model, metrics))
}
