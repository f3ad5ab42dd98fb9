//! Seeded synthetic corpora for training experiments.
#![allow(dead_code)]

use std::collections::HashSet;

use biaslab_core::corpus::normalize_for_overlap;
use biaslab_core::model::TextExample;
use biaslab_core::Label;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fillers(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("filler{i}")).collect()
}

pub fn triggers(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("loaded{i}")).collect()
}

/// A sentence of 6–11 filler words; biased sentences carry one trigger at a random position.
pub fn sentence(rng: &mut ChaCha8Rng, biased: bool, fillers: &[String], triggers: &[String]) -> String {
    let len = rng.gen_range(6..12);
    let mut words: Vec<&str> = (0..len).map(|_| fillers.choose(rng).unwrap().as_str()).collect();
    if biased {
        let pos = rng.gen_range(0..words.len());
        words[pos] = triggers.choose(rng).unwrap().as_str();
    }
    words.join(" ")
}

fn label(biased: bool) -> Label {
    if biased {
        Label::Biased
    } else {
        Label::Neutral
    }
}

/// Balanced planted-trigger corpus: a sentence is biased iff it contains a trigger.
pub fn planted(n: usize, seed: u64) -> Vec<TextExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = fillers(40);
    let t = triggers(8);
    (0..n)
        .map(|i| {
            let biased = i % 2 == 0;
            TextExample::new(format!("p{i}").as_str(), sentence(&mut rng, biased, &f, &t), label(biased))
        })
        .collect()
}

pub struct TransferBenchmark {
    pub distant: Vec<TextExample>,
    pub gold: Vec<TextExample>,
    pub test: Vec<TextExample>,
    /// Distant examples whose label was flipped.
    pub flipped: usize,
}

/// Many triggers, few gold examples: gold alone sees each trigger about once,
/// while the noisy distant set covers every trigger many times. Texts are
/// unique across all three sets under overlap normalization.
pub fn transfer(seed: u64, n_distant: usize, n_gold: usize, n_test: usize, noise: f64) -> TransferBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = fillers(120);
    let t = triggers(60);
    let mut seen = HashSet::new();
    let mut draw = |rng: &mut ChaCha8Rng, prefix: &str, n: usize| -> Vec<(String, bool, String)> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let biased = rng.gen_bool(0.5);
            let text = sentence(rng, biased, &f, &t);
            if seen.insert(normalize_for_overlap(&text)) {
                out.push((format!("{prefix}{}", out.len()), biased, text));
            }
        }
        out
    };
    let distant_raw = draw(&mut rng, "d", n_distant);
    let gold_raw = draw(&mut rng, "g", n_gold);
    let test_raw = draw(&mut rng, "t", n_test);
    let mut flipped = 0;
    let distant = distant_raw
        .into_iter()
        .map(|(id, biased, text)| {
            let noisy = rng.gen_bool(noise);
            flipped += noisy as usize;
            TextExample::new(id.as_str(), text, label(biased ^ noisy))
        })
        .collect();
    let to_examples = |raw: Vec<(String, bool, String)>| {
        raw.into_iter()
            .map(|(id, biased, text)| TextExample::new(id.as_str(), text, label(biased)))
            .collect()
    };
    TransferBenchmark {
        distant,
        gold: to_examples(gold_raw),
        test: to_examples(test_raw),
        flipped,
    }
}
