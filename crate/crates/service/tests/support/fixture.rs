//! A small, fully deterministic workbench population used by the service tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use biaslab_core::annotation::{AnnotatorProfile, Role};
use biaslab_core::corpus::{JournalisticStandard, Leaning, Outlet, SentenceRecord};
use biaslab_core::model::{Checkpoint, ClassifierModel, ModelShape};
use biaslab_core::textprep::{Tokenizer, Vocabulary};
use biaslab_core::Label;
use chrono::{DateTime, TimeZone, Utc};

pub const TOKEN: &str = "test-token";
pub const PLAYERS: [&str; 3] = ["p0", "p1", "p2"];

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap()
}

pub fn outlets() -> Vec<Outlet> {
    vec![
        Outlet {
            id: "wire".into(),
            name: "Wire Service".into(),
            leaning: Leaning::Center,
            standard: JournalisticStandard::High,
        },
        Outlet {
            id: "left-daily".into(),
            name: "Left Daily".into(),
            leaning: Leaning::Left,
            standard: JournalisticStandard::Partisan,
        },
        Outlet {
            id: "right-daily".into(),
            name: "Right Daily".into(),
            leaning: Leaning::Right,
            standard: JournalisticStandard::Partisan,
        },
    ]
}

fn record(id: String, text: String, outlet: &str, label: Option<Label>, tags: &[&str]) -> SentenceRecord {
    SentenceRecord {
        id: id.into(),
        text,
        outlet: outlet.into(),
        topic: "economy".into(),
        date: None,
        label,
        tags: tags.iter().map(|t| t.to_string()).collect::<BTreeSet<_>>(),
    }
}

const LOADED: [&str; 4] = ["reckless", "disastrous", "radical", "shameful"];
const PLAIN: [&str; 4] = ["announced", "reported", "proposed", "said"];

/// Gold sentences alternate between a loaded and a plain verb phrase.
pub fn gold(n: usize) -> Vec<SentenceRecord> {
    (0..n)
        .map(|i| {
            let biased = i % 2 == 0;
            let word = if biased { LOADED[i % 4] } else { PLAIN[i % 4] };
            let label = if biased { Label::Biased } else { Label::Neutral };
            record(format!("g{i}"), format!("The senator {word} the budget plan number {i}"), "wire", Some(label), &["gold"])
        })
        .collect()
}

pub fn unlabeled(n: usize) -> Vec<SentenceRecord> {
    (0..n)
        .map(|i| {
            let word = if i % 3 == 0 { LOADED[i % 4] } else { PLAIN[i % 4] };
            record(format!("u{i}"), format!("Officials {word} new tariffs on item {i}"), "wire", None, &[])
        })
        .collect()
}

pub fn distant(n: usize) -> Vec<SentenceRecord> {
    (0..n)
        .map(|i| {
            let outlet = ["wire", "left-daily", "right-daily"][i % 3];
            record(format!("d{i}"), format!("Headline {i} about {} spending", PLAIN[i % 4]), outlet, None, &[])
        })
        .collect()
}

pub fn profiles() -> Vec<AnnotatorProfile> {
    let mut out = vec![AnnotatorProfile::new("expert", Role::Expert)];
    out.extend(PLAYERS.iter().map(|p| AnnotatorProfile::new(*p, Role::Player)));
    out
}

/// A small untrained but deterministic checkpoint over the fixture vocabulary.
pub fn checkpoint() -> Checkpoint {
    let tok = Tokenizer::default();
    let texts: Vec<String> = gold(12).into_iter().chain(unlabeled(12)).map(|r| r.text).collect();
    let vocab = Vocabulary::build(&tok, texts.iter().map(String::as_str), 1);
    let model = ClassifierModel::random(ModelShape::new(vocab.size(), 6, 5), vocab.checksum(), 7, 0.8);
    Checkpoint::new(tok, 32, vocab, model).unwrap()
}
