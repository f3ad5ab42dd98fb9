//! Random action sequences against the game engine, checking its
//! state-machine invariants after every step.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use biaslab_core::annotation::{AnnotationRecord, AnnotationStore, AnnotatorProfile, Role, SentenceLabel};
use biaslab_core::corpus::{Corpus, CorpusKind, JournalisticStandard, Leaning, Outlet, SentenceRecord};
use biaslab_core::game::{Agreement, EventKind, GameConfig, GameEngine, Reference, Round, Served, SessionState};
use biaslab_core::textprep::Tokenizer;
use biaslab_core::{AnnotatorId, Label, SentenceId, SessionId};
use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PLAYERS: [&str; 4] = ["p0", "p1", "p2", "p3"];

#[derive(Debug, Default, Clone)]
pub struct SimStats {
    pub actions: usize,
    pub serves: usize,
    pub accepted_answers: usize,
    pub rejected: usize,
    pub authored: usize,
    pub completed_sessions: usize,
    pub max_round: Option<Round>,
}

pub struct Sim {
    pub game: GameEngine,
    pub corpus: Corpus,
    pub store: AnnotationStore,
    pub tok: Tokenizer,
    pub clock: DateTime<Utc>,
    pub rng: ChaCha8Rng,
}

impl Sim {
    pub fn new(seed: u64) -> Self {
        let tok = Tokenizer::default();
        let mut corpus = Corpus::new();
        corpus
            .add_outlet(Outlet {
                id: "wire".into(),
                name: "Wire".into(),
                leaning: Leaning::Center,
                standard: JournalisticStandard::High,
            })
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words = ["the", "plan", "radical", "senator", "said", "budget", "reckless", "vote", "quietly", "slashed"];
        let text = |rng: &mut ChaCha8Rng, i: usize| {
            let len = rng.gen_range(3..8);
            let body: Vec<&str> = (0..len).map(|_| *words.choose(rng).unwrap()).collect();
            format!("{} {i}", body.join(" "))
        };
        let record = |id: String, text: String, label: Option<Label>| SentenceRecord {
            id: id.into(),
            text,
            outlet: "wire".into(),
            topic: "politics".into(),
            date: None,
            label,
            tags: BTreeSet::new(),
        };
        let gold: Vec<SentenceRecord> = (0..8)
            .map(|i| {
                let label = if rng.gen_bool(0.5) { Label::Biased } else { Label::Neutral };
                record(format!("g{i}"), text(&mut rng, i), Some(label))
            })
            .collect();
        let unlabeled: Vec<SentenceRecord> = (0..12).map(|i| record(format!("u{i}"), text(&mut rng, 100 + i), None)).collect();
        corpus.insert_records(gold.clone(), CorpusKind::Gold).unwrap();
        corpus.insert_records(unlabeled, CorpusKind::Unlabeled).unwrap();

        let mut store = AnnotationStore::new(&tok);
        store.upsert_profile(AnnotatorProfile::new("expert", Role::Expert)).unwrap();
        for p in PLAYERS {
            store.upsert_profile(AnnotatorProfile::new(p, Role::Player)).unwrap();
        }
        let t0 = Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap();
        for g in &gold {
            let label = g.label.unwrap();
            let words = if label == Label::Biased { vec![0] } else { vec![] };
            store
                .submit(
                    AnnotationRecord {
                        sentence_id: g.id.clone(),
                        annotator_id: "expert".into(),
                        sentence_label: label.into(),
                        biased_words: words,
                        timestamp: t0,
                    },
                    &corpus,
                    &tok,
                )
                .unwrap();
        }
        let config = GameConfig {
            seed,
            tutorial_steps: vec!["one".into(), "two".into()],
            calibration_batch: 3,
            production_batch: 3,
            session_ttl_secs: 600,
            ..GameConfig::default()
        };
        Self {
            game: GameEngine::new(config),
            corpus,
            store,
            tok,
            clock: t0,
            rng,
        }
    }

    fn tick(&mut self) -> DateTime<Utc> {
        self.clock += Duration::seconds(self.rng.gen_range(1..30));
        self.clock
    }
}

/// Runs `steps` random actions; returns statistics or the first violated invariant.
pub fn simulate(seed: u64, steps: usize) -> Result<SimStats, String> {
    let mut sim = Sim::new(seed);
    let mut stats = SimStats::default();
    let mut last_round: BTreeMap<SessionId, Round> = BTreeMap::new();
    let mut last_score: BTreeMap<SessionId, u64> = BTreeMap::new();
    let mut accepted: Vec<(SentenceId, AnnotatorId, Label, Vec<usize>)> = Vec::new();
    let expert_records = sim.store.len();

    for _ in 0..steps {
        stats.actions += 1;
        let player: AnnotatorId = (*PLAYERS.choose(&mut sim.rng).unwrap()).into();
        let session = sim.game.active_session(&player).cloned();
        let now = sim.tick();
        let roll = sim.rng.gen_range(0..100);
        match (session, roll) {
            (None, _) => {
                sim.game.start_session(&player, &sim.store, now).map_err(|e| e.to_string())?;
            }
            (Some(s), 0..=44) => {
                let served = sim
                    .game
                    .serve_next(&s, &sim.corpus, &sim.store, &sim.tok, now)
                    .map_err(|e| format!("serve failed: {e}"))?;
                stats.serves += 1;
                if matches!(served, Served::Completed) {
                    stats.completed_sessions += 1;
                }
            }
            (Some(s), 45..=84) => {
                let outstanding = sim.game.session(&s).unwrap().outstanding.clone();
                let target = match (outstanding, sim.rng.gen_bool(0.9)) {
                    (Some(id), true) => id,
                    // Occasionally answer something else: must be rejected.
                    _ => format!("{}{}", ["g", "u"][sim.rng.gen_range(0..2)], sim.rng.gen_range(0..12)).into(),
                };
                let label = if sim.rng.gen_bool(0.5) { Label::Biased } else { Label::Neutral };
                let words: Vec<usize> = if label == Label::Biased {
                    (0..sim.rng.gen_range(0..3)).map(|_| sim.rng.gen_range(0..9)).collect()
                } else {
                    Vec::new()
                };
                let was_outstanding = sim.game.session(&s).unwrap().outstanding.as_ref() == Some(&target);
                match sim
                    .game
                    .submit_answer(&s, &target, label, words.clone(), &sim.corpus, &mut sim.store, &sim.tok, now)
                {
                    Ok(_) => {
                        if !was_outstanding {
                            return Err(format!("accepted an answer for unserved `{target}`"));
                        }
                        let mut sorted = words;
                        sorted.sort_unstable();
                        sorted.dedup();
                        accepted.push((target, player.clone(), label, sorted));
                        stats.accepted_answers += 1;
                    }
                    Err(_) => stats.rejected += 1,
                }
            }
            (Some(s), 85..=92) => {
                let text = if sim.rng.gen_bool(0.1) { "   ".to_owned() } else { format!("a reckless scheme number {}", stats.actions) };
                let unlocked = sim.game.session(&s).unwrap().authoring_unlocked;
                match sim.game.submit_authored(&s, &text, &mut sim.corpus, &sim.tok, now) {
                    Ok(_) => {
                        if !unlocked {
                            return Err("authored before unlock".into());
                        }
                        stats.authored += 1;
                    }
                    Err(_) => stats.rejected += 1,
                }
            }
            (Some(_), _) => {
                let later = sim.clock + Duration::seconds(sim.rng.gen_range(0..1200));
                sim.clock = later;
                sim.game.expire_idle(later);
            }
        }

        for session in sim.game.sessions() {
            let prev = last_round.insert(session.id.clone(), session.round);
            if prev.is_some_and(|r| r > session.round) {
                return Err(format!("session {} regressed from {:?} to {:?}", session.id, prev, session.round));
            }
            let prev_score = last_score.insert(session.id.clone(), session.score);
            if prev_score.is_some_and(|p| p > session.score) {
                return Err(format!("session {} score decreased", session.id));
            }
            let distinct: BTreeSet<&SentenceId> = session.items_served.iter().collect();
            if distinct.len() != session.items_served.len() {
                return Err(format!("session {} was served an item twice", session.id));
            }
            if session.state != SessionState::Active && session.outstanding.is_some() {
                return Err(format!("inactive session {} holds an item", session.id));
            }
            stats.max_round = stats.max_round.max(Some(session.round));
        }
    }

    // Every accepted answer appears exactly once in the annotation store.
    let mut keys = BTreeSet::new();
    for (sentence, player, label, words) in &accepted {
        if !keys.insert((sentence.clone(), player.clone())) {
            return Err(format!("{player} answered {sentence} twice"));
        }
        let record = sim
            .store
            .record(sentence, player)
            .ok_or_else(|| format!("answer {player}/{sentence} missing from the store"))?;
        if record.sentence_label != SentenceLabel::from(*label) || &record.biased_words != words {
            return Err(format!("stored record for {player}/{sentence} differs from the answer"));
        }
    }
    if sim.store.len() != expert_records + accepted.len() {
        return Err(format!(
            "store holds {} records, expected {}",
            sim.store.len(),
            expert_records + accepted.len()
        ));
    }

    // Replay: calibration feedback agrees exactly when the label equals the expert label.
    for event in sim.game.events() {
        if let EventKind::Answered { sentence_id, label, feedback, .. } = &event.kind {
            if feedback.reference == Reference::Expert {
                let expert = sim.corpus.sentence(sentence_id).and_then(|s| s.label).ok_or("calibration item lacks label")?;
                let want = if expert == *label { Agreement::Match } else { Agreement::Mismatch };
                if feedback.agreement != want {
                    return Err(format!("calibration feedback on {sentence_id} disagrees with replay"));
                }
            }
        }
    }
    Ok(stats)
}
