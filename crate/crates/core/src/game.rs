//! Four-round annotation game: tutorial, calibration against expert labels,
//! production annotation scored by peer consensus, and sentence authoring.
//!
//! The engine owns sessions, peer votes and the event log. The corpus and
//! annotation store are passed in by the caller so every accepted answer is
//! persisted as an ordinary annotation record.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationError, AnnotationRecord, AnnotationStore, Role};
use crate::corpus::{Corpus, CorpusKind, JournalisticStandard, Leaning, Outlet, Sentence};
use crate::textprep::Tokenizer;
use crate::types::{AnnotatorId, Label, OutletId, SentenceId, SessionId};

/// Outlet under which player-written sentences are stored.
pub const AUTHORED_OUTLET: &str = "player-authored";
pub const AUTHORED_TAG: &str = "authored";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Round {
    Tutorial,
    Calibration,
    Production,
    Authoring,
}

impl Round {
    fn index(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Active,
    Completed,
    Abandoned,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionState::Active => "active",
            SessionState::Completed => "completed",
            SessionState::Abandoned => "abandoned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agreement {
    Match,
    Mismatch,
    Pending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    Expert,
    PeerConsensus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub item_id: SentenceId,
    pub agreement: Agreement,
    pub reference: Reference,
    pub points_awarded: u64,
    pub explanation: String,
    /// Token indices the experts marked as biased (calibration only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expert_words: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameConfig {
    pub seed: u64,
    pub tutorial_steps: Vec<String>,
    pub calibration_batch: usize,
    pub production_batch: usize,
    pub quorum: usize,
    pub expert_match_points: u64,
    pub peer_match_points: u64,
    pub authored_rating_points: u64,
    pub session_ttl_secs: i64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tutorial_steps: vec![
                "Media bias by word choice: the same event can be described with neutral or loaded words.".into(),
                "Label each sentence as biased or neutral. If biased, mark the words that carry the bias.".into(),
                "Calibration rounds compare your answers with expert labels. Matches earn 10 points.".into(),
                "Later you label new sentences. Points arrive once other players agree with you.".into(),
                "After one production batch you can write your own sentences for others to rate.".into(),
            ],
            calibration_batch: 5,
            production_batch: 5,
            quorum: 3,
            expert_match_points: 10,
            peer_match_points: 5,
            authored_rating_points: 2,
            session_ttl_secs: 30 * 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameSession {
    pub id: SessionId,
    pub player_id: AnnotatorId,
    pub seed: u64,
    pub round: Round,
    pub state: SessionState,
    pub score: u64,
    pub items_served: Vec<SentenceId>,
    pub answered: BTreeSet<SentenceId>,
    pub outstanding: Option<SentenceId>,
    pub tutorial_position: usize,
    pub calibration_answered: usize,
    pub production_answered: usize,
    pub authoring_unlocked: bool,
    /// Set when the authoring prompt has been shown.
    pub authoring_announced: bool,
    pub feedback: Vec<Feedback>,
    pub started_at: DateTime<Utc>,
    pub last_action_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Served {
    TutorialStep {
        index: usize,
        total: usize,
        content: String,
    },
    Item {
        sentence_id: SentenceId,
        round: Round,
        text: String,
        tokens: Vec<String>,
    },
    AuthoringPrompt {
        message: String,
    },
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerVote {
    pub annotator: AnnotatorId,
    pub session: SessionId,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerItem {
    pub votes: Vec<PeerVote>,
    /// Majority label, fixed once established.
    pub consensus: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthoredSentence {
    pub id: SentenceId,
    pub author_player_id: AnnotatorId,
    pub session: SessionId,
    pub text: String,
    pub peer_ratings: Vec<(AnnotatorId, Label)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum EventKind {
    Started { player: AnnotatorId },
    Served { served: Served },
    RoundChanged { from: Round, to: Round },
    Answered { sentence_id: SentenceId, label: Label, biased_words: Vec<usize>, feedback: Feedback },
    Awarded { points: u64, reason: String },
    Authored { sentence_id: SentenceId },
    Completed,
    Abandoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub session_id: SessionId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub player_id: AnnotatorId,
    pub score: u64,
    pub last_scored_at: Option<DateTime<Utc>>,
}

#[derive(Debug, thiserror::Error)]
pub enum GameError {
    #[error("unknown session `{0}`")]
    UnknownSession(SessionId),
    #[error("unknown player `{0}`")]
    UnknownPlayer(AnnotatorId),
    #[error("annotator `{0}` is not a player")]
    NotAPlayer(AnnotatorId),
    #[error("player `{player}` already has active session `{session}`")]
    ActiveSessionExists { player: AnnotatorId, session: SessionId },
    #[error("session `{session}` is {state}")]
    NotActive { session: SessionId, state: SessionState },
    #[error("sentence `{0}` was not served to this session")]
    NotServed(SentenceId),
    #[error("sentence `{0}` was already answered in this session")]
    AlreadyAnswered(SentenceId),
    #[error("authoring is not unlocked for session `{0}`")]
    AuthoringLocked(SessionId),
    #[error("invalid authored text: {0}")]
    InvalidText(String),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayerStanding {
    pub score: u64,
    pub last_scored_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GameEngine {
    pub config: GameConfig,
    sessions: BTreeMap<SessionId, GameSession>,
    active: BTreeMap<AnnotatorId, SessionId>,
    peer: BTreeMap<SentenceId, PeerItem>,
    authored: BTreeMap<SentenceId, AuthoredSentence>,
    standings: BTreeMap<AnnotatorId, PlayerStanding>,
    events: Vec<GameEvent>,
    session_counter: u64,
    authored_counter: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn item_seed(session_seed: u64, round: Round, position: usize) -> u64 {
    splitmix64(splitmix64(session_seed ^ round.index()) ^ position as u64)
}

fn label_str(label: Label) -> &'static str {
    label.as_str()
}

impl GameEngine {
    pub fn new(config: GameConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn session(&self, id: &SessionId) -> Option<&GameSession> {
        self.sessions.get(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &GameSession> {
        self.sessions.values()
    }

    pub fn active_session(&self, player: &AnnotatorId) -> Option<&SessionId> {
        self.active.get(player)
    }

    pub fn peer_item(&self, id: &SentenceId) -> Option<&PeerItem> {
        self.peer.get(id)
    }

    pub fn authored(&self) -> impl Iterator<Item = &AuthoredSentence> {
        self.authored.values()
    }

    pub fn events(&self) -> &[GameEvent] {
        &self.events
    }

    /// Event log as JSON lines.
    pub fn export_events_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("events serialize") + "\n")
            .collect()
    }

    fn log(&mut self, at: DateTime<Utc>, session_id: &SessionId, kind: EventKind) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(GameEvent {
            seq,
            at,
            session_id: session_id.clone(),
            kind,
        });
    }

    fn session_mut(&mut self, id: &SessionId) -> Result<&mut GameSession, GameError> {
        self.sessions.get_mut(id).ok_or_else(|| GameError::UnknownSession(id.clone()))
    }

    fn active_session_mut(&mut self, id: &SessionId) -> Result<&mut GameSession, GameError> {
        let session = self.session_mut(id)?;
        if session.state != SessionState::Active {
            return Err(GameError::NotActive {
                session: id.clone(),
                state: session.state,
            });
        }
        Ok(session)
    }

    fn award(&mut self, session_id: &SessionId, points: u64, reason: String, now: DateTime<Utc>) {
        if points == 0 {
            return;
        }
        let session = self.sessions.get_mut(session_id).expect("award targets a known session");
        session.score += points;
        let standing = self.standings.entry(session.player_id.clone()).or_default();
        standing.score += points;
        standing.last_scored_at = Some(now);
        self.log(now, session_id, EventKind::Awarded { points, reason });
    }

    pub fn start_session(
        &mut self,
        player: &AnnotatorId,
        annotations: &AnnotationStore,
        now: DateTime<Utc>,
    ) -> Result<&GameSession, GameError> {
        let profile = annotations.profile(player).ok_or_else(|| GameError::UnknownPlayer(player.clone()))?;
        if profile.role != Role::Player {
            return Err(GameError::NotAPlayer(player.clone()));
        }
        if let Some(session) = self.active.get(player) {
            return Err(GameError::ActiveSessionExists {
                player: player.clone(),
                session: session.clone(),
            });
        }
        self.session_counter += 1;
        let id = SessionId::new(format!("s-{}", self.session_counter));
        let session = GameSession {
            id: id.clone(),
            player_id: player.clone(),
            seed: splitmix64(self.config.seed ^ splitmix64(self.session_counter)),
            round: Round::Tutorial,
            state: SessionState::Active,
            score: 0,
            items_served: Vec::new(),
            answered: BTreeSet::new(),
            outstanding: None,
            tutorial_position: 0,
            calibration_answered: 0,
            production_answered: 0,
            authoring_unlocked: false,
            authoring_announced: false,
            feedback: Vec::new(),
            started_at: now,
            last_action_at: now,
        };
        self.sessions.insert(id.clone(), session);
        self.active.insert(player.clone(), id.clone());
        self.standings.entry(player.clone()).or_default();
        self.log(now, &id, EventKind::Started { player: player.clone() });
        Ok(&self.sessions[&id])
    }

    fn change_round(&mut self, id: &SessionId, to: Round, now: DateTime<Utc>) {
        let session = self.sessions.get_mut(id).expect("known session");
        let from = session.round;
        debug_assert!(to > from, "rounds only move forward");
        session.round = to;
        self.log(now, id, EventKind::RoundChanged { from, to });
    }

    fn complete(&mut self, id: &SessionId, now: DateTime<Utc>) -> Served {
        let session = self.sessions.get_mut(id).expect("known session");
        session.state = SessionState::Completed;
        session.outstanding = None;
        let player = session.player_id.clone();
        self.active.remove(&player);
        self.log(now, id, EventKind::Completed);
        Served::Completed
    }

    fn candidates(&self, session: &GameSession, corpus: &Corpus, annotations: &AnnotationStore) -> Vec<SentenceId> {
        let served: BTreeSet<&SentenceId> = session.items_served.iter().collect();
        let eligible = |s: &&Sentence| {
            !served.contains(&s.id) && annotations.record(&s.id, &session.player_id).is_none()
        };
        match session.round {
            Round::Calibration => corpus
                .sentences_of(CorpusKind::Gold)
                .filter(|s| s.label.is_some())
                .filter(eligible)
                .map(|s| s.id.clone())
                .collect(),
            Round::Production | Round::Authoring => corpus
                .sentences_of(CorpusKind::Unlabeled)
                .filter(eligible)
                .filter(|s| {
                    self.authored
                        .get(&s.id)
                        .is_none_or(|a| a.author_player_id != session.player_id)
                })
                .map(|s| s.id.clone())
                .collect(),
            Round::Tutorial => Vec::new(),
        }
    }

    /// Next thing to show the session. An unanswered item is returned again
    /// without counting as a new serve.
    pub fn serve_next(
        &mut self,
        id: &SessionId,
        corpus: &Corpus,
        annotations: &AnnotationStore,
        tokenizer: &Tokenizer,
        now: DateTime<Utc>,
    ) -> Result<Served, GameError> {
        let steps = self.config.tutorial_steps.len();
        let session = self.active_session_mut(id)?;
        session.last_action_at = now;
        if let Some(current) = session.outstanding.clone() {
            let round = session.round;
            let text = corpus.sentence(&current).map(|s| s.text.clone()).unwrap_or_default();
            return Ok(Served::Item {
                tokens: tokenizer.tokenize(&text),
                sentence_id: current,
                round,
                text,
            });
        }

        if session.round == Round::Tutorial {
            if session.tutorial_position < steps {
                let index = session.tutorial_position;
                session.tutorial_position += 1;
                let served = Served::TutorialStep {
                    index,
                    total: steps,
                    content: self.config.tutorial_steps[index].clone(),
                };
                self.log(now, id, EventKind::Served { served: served.clone() });
                return Ok(served);
            }
            self.change_round(id, Round::Calibration, now);
        }

        let session = &self.sessions[id];
        if session.round == Round::Calibration && session.calibration_answered >= self.config.calibration_batch {
            self.change_round(id, Round::Production, now);
        }
        let session = &self.sessions[id];
        if session.authoring_unlocked && !session.authoring_announced {
            let session = self.sessions.get_mut(id).expect("known session");
            session.authoring_announced = true;
            if session.round < Round::Authoring {
                self.change_round(id, Round::Authoring, now);
            }
            let served = Served::AuthoringPrompt {
                message: "Authoring unlocked: write sentences for other players to rate, or keep annotating.".into(),
            };
            self.log(now, id, EventKind::Served { served: served.clone() });
            return Ok(served);
        }

        loop {
            let session = &self.sessions[id];
            let pool = self.candidates(session, corpus, annotations);
            if let Some(pick) = (!pool.is_empty()).then(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed(session.seed, session.round, session.items_served.len()));
                pool[rng.gen_range(0..pool.len())].clone()
            }) {
                let session = self.sessions.get_mut(id).expect("known session");
                session.items_served.push(pick.clone());
                session.outstanding = Some(pick.clone());
                let text = corpus.sentence(&pick).map(|s| s.text.clone()).unwrap_or_default();
                let served = Served::Item {
                    tokens: tokenizer.tokenize(&text),
                    sentence_id: pick,
                    round: session.round,
                    text,
                };
                self.log(now, id, EventKind::Served { served: served.clone() });
                return Ok(served);
            }
            match session.round {
                Round::Calibration => self.change_round(id, Round::Production, now),
                _ => return Ok(self.complete(id, now)),
            }
        }
    }

    fn expert_words(&self, sentence: &SentenceId, annotations: &AnnotationStore) -> Vec<usize> {
        let words: BTreeSet<usize> = annotations
            .records_for(sentence)
            .filter(|r| annotations.profile(&r.annotator_id).is_some_and(|p| p.role == Role::Expert))
            .flat_map(|r| r.biased_words.iter().copied())
            .collect();
        words.into_iter().collect()
    }

    /// Records an answer to the session's outstanding item and scores it.
    #[allow(clippy::too_many_arguments)]
    pub fn submit_answer(
        &mut self,
        id: &SessionId,
        sentence_id: &SentenceId,
        label: Label,
        biased_words: Vec<usize>,
        corpus: &Corpus,
        annotations: &mut AnnotationStore,
        tokenizer: &Tokenizer,
        now: DateTime<Utc>,
    ) -> Result<Feedback, GameError> {
        let session = self.active_session_mut(id)?;
        if session.answered.contains(sentence_id) {
            return Err(GameError::AlreadyAnswered(sentence_id.clone()));
        }
        if session.outstanding.as_ref() != Some(sentence_id) {
            return Err(GameError::NotServed(sentence_id.clone()));
        }
        let player = session.player_id.clone();
        let round = session.round;
        let record = annotations.validate(
            AnnotationRecord {
                sentence_id: sentence_id.clone(),
                annotator_id: player.clone(),
                sentence_label: label.into(),
                biased_words,
                timestamp: now,
            },
            corpus,
            tokenizer,
        )?;
        let words = record.biased_words.clone();
        annotations.submit(record, corpus, tokenizer)?;

        let session = self.sessions.get_mut(id).expect("known session");
        session.outstanding = None;
        session.answered.insert(sentence_id.clone());
        session.last_action_at = now;

        let feedback = if round == Round::Calibration {
            session.calibration_answered += 1;
            let expert = corpus
                .sentence(sentence_id)
                .and_then(|s| s.label)
                .expect("calibration items carry an expert label");
            let expert_words = self.expert_words(sentence_id, annotations);
            let matched = expert == label;
            let points = if matched { self.config.expert_match_points } else { 0 };
            let tokens = corpus.sentence(sentence_id).map(|s| tokenizer.tokenize(&s.text)).unwrap_or_default();
            let marked: Vec<&str> = expert_words.iter().filter_map(|&i| tokens.get(i).map(String::as_str)).collect();
            let explanation = if marked.is_empty() {
                format!("expert label: {}; no words marked", label_str(expert))
            } else {
                format!("expert label: {}; biased words: {}", label_str(expert), marked.join(", "))
            };
            let feedback = Feedback {
                item_id: sentence_id.clone(),
                agreement: if matched { Agreement::Match } else { Agreement::Mismatch },
                reference: Reference::Expert,
                points_awarded: points,
                explanation,
                expert_words,
            };
            self.award(id, points, format!("expert match on {sentence_id}"), now);
            feedback
        } else {
            session.production_answered += 1;
            if session.production_answered >= self.config.production_batch {
                session.authoring_unlocked = true;
            }
            self.rate_peer_item(id, &player, sentence_id, label, now)
        };
        let session = self.sessions.get_mut(id).expect("known session");
        session.feedback.push(feedback.clone());
        self.log(
            now,
            id,
            EventKind::Answered {
                sentence_id: sentence_id.clone(),
                label,
                biased_words: words,
                feedback: feedback.clone(),
            },
        );
        Ok(feedback)
    }

    fn rate_peer_item(
        &mut self,
        id: &SessionId,
        player: &AnnotatorId,
        sentence_id: &SentenceId,
        label: Label,
        now: DateTime<Utc>,
    ) -> Feedback {
        if let Some(authored) = self.authored.get_mut(sentence_id) {
            authored.peer_ratings.push((player.clone(), label));
            let author_session = authored.session.clone();
            let points = self.config.authored_rating_points;
            self.award(&author_session, points, format!("rating received on {sentence_id}"), now);
        }
        let quorum = self.config.quorum;
        let item = self.peer.entry(sentence_id.clone()).or_default();
        item.votes.push(PeerVote {
            annotator: player.clone(),
            session: id.clone(),
            label,
        });
        let n = item.votes.len();

        if let Some(consensus) = item.consensus {
            let matched = consensus == label;
            let points = if matched { self.config.peer_match_points } else { 0 };
            self.award(id, points, format!("peer consensus match on {sentence_id}"), now);
            return Feedback {
                item_id: sentence_id.clone(),
                agreement: if matched { Agreement::Match } else { Agreement::Mismatch },
                reference: Reference::PeerConsensus,
                points_awarded: points,
                explanation: format!("peer consensus: {}", label_str(consensus)),
                expert_words: Vec::new(),
            };
        }

        let biased = item.votes.iter().filter(|v| v.label == Label::Biased).count();
        let majority = if n < quorum {
            None
        } else if 2 * biased > n {
            Some(Label::Biased)
        } else if 2 * (n - biased) > n {
            Some(Label::Neutral)
        } else {
            None
        };
        let pending = Feedback {
            item_id: sentence_id.clone(),
            agreement: Agreement::Pending,
            reference: Reference::PeerConsensus,
            points_awarded: 0,
            explanation: if n < quorum {
                format!("awaiting {} more rating(s)", quorum - n)
            } else {
                "ratings tied; awaiting one more".into()
            },
            expert_words: Vec::new(),
        };
        let Some(consensus) = majority else {
            return pending;
        };
        item.consensus = Some(consensus);
        let votes = item.votes.clone();
        let support = votes.iter().filter(|v| v.label == consensus).count();
        let explanation = format!("peer consensus: {} ({support} of {n})", label_str(consensus));
        let points = self.config.peer_match_points;
        let mut own = None;
        for vote in votes {
            let matched = vote.label == consensus;
            let awarded = if matched { points } else { 0 };
            let resolved = Feedback {
                item_id: sentence_id.clone(),
                agreement: if matched { Agreement::Match } else { Agreement::Mismatch },
                reference: Reference::PeerConsensus,
                points_awarded: awarded,
                explanation: explanation.clone(),
                expert_words: Vec::new(),
            };
            if &vote.session == id {
                own = Some(resolved);
            } else if let Some(session) = self.sessions.get_mut(&vote.session) {
                if let Some(slot) = session.feedback.iter_mut().find(|f| &f.item_id == sentence_id) {
                    *slot = resolved;
                }
            }
            self.award(&vote.session, awarded, format!("peer consensus match on {sentence_id}"), now);
        }
        own.expect("the triggering vote is among the votes")
    }

    /// Adds a player-written sentence to the production pool.
    pub fn submit_authored(
        &mut self,
        id: &SessionId,
        text: &str,
        corpus: &mut Corpus,
        tokenizer: &Tokenizer,
        now: DateTime<Utc>,
    ) -> Result<SentenceId, GameError> {
        let session = self.active_session_mut(id)?;
        if !session.authoring_unlocked {
            return Err(GameError::AuthoringLocked(id.clone()));
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(GameError::InvalidText("text is empty".into()));
        }
        if tokenizer.token_count(text) == 0 {
            return Err(GameError::InvalidText("text has no tokens".into()));
        }
        session.last_action_at = now;
        let player = session.player_id.clone();
        let sentence_id = loop {
            self.authored_counter += 1;
            let candidate = SentenceId::new(format!("authored-{}", self.authored_counter));
            if corpus.sentence(&candidate).is_none() {
                break candidate;
            }
        };
        corpus.ensure_outlet(Outlet {
            id: OutletId::new(AUTHORED_OUTLET),
            name: "Player-authored sentences".into(),
            leaning: Leaning::Center,
            standard: JournalisticStandard::Partisan,
        });
        corpus.insert_authored(Sentence {
            id: sentence_id.clone(),
            text: text.to_owned(),
            outlet: OutletId::new(AUTHORED_OUTLET),
            topic: AUTHORED_TAG.into(),
            date: Some(now.date_naive()),
            kind: CorpusKind::Unlabeled,
            label: None,
            tags: BTreeSet::from([AUTHORED_TAG.to_owned()]),
        });
        self.authored.insert(
            sentence_id.clone(),
            AuthoredSentence {
                id: sentence_id.clone(),
                author_player_id: player,
                session: id.clone(),
                text: text.to_owned(),
                peer_ratings: Vec::new(),
            },
        );
        self.log(
            now,
            id,
            EventKind::Authored {
                sentence_id: sentence_id.clone(),
            },
        );
        Ok(sentence_id)
    }

    /// Marks sessions idle for longer than the configured TTL as abandoned,
    /// releasing their unanswered items. Returns the affected session ids.
    pub fn expire_idle(&mut self, now: DateTime<Utc>) -> Vec<SessionId> {
        let ttl = Duration::seconds(self.config.session_ttl_secs);
        let stale: Vec<SessionId> = self
            .sessions
            .values()
            .filter(|s| s.state == SessionState::Active && now - s.last_action_at > ttl)
            .map(|s| s.id.clone())
            .collect();
        for id in &stale {
            let session = self.sessions.get_mut(id).expect("known session");
            session.state = SessionState::Abandoned;
            session.outstanding = None;
            let player = session.player_id.clone();
            self.active.remove(&player);
            self.log(now, id, EventKind::Abandoned);
        }
        stale
    }

    pub fn feedback(&self, id: &SessionId) -> Result<&[Feedback], GameError> {
        self.sessions
            .get(id)
            .map(|s| s.feedback.as_slice())
            .ok_or_else(|| GameError::UnknownSession(id.clone()))
    }

    /// Players by total score, ties broken by who reached it first, then id.
    pub fn leaderboard(&self, top_n: usize) -> Vec<LeaderboardEntry> {
        let mut rows: Vec<(&AnnotatorId, &PlayerStanding)> = self.standings.iter().collect();
        rows.sort_by(|a, b| {
            b.1.score
                .cmp(&a.1.score)
                .then_with(|| match (a.1.last_scored_at, b.1.last_scored_at) {
                    (Some(x), Some(y)) => x.cmp(&y),
                    (Some(_), None) => std::cmp::Ordering::Less,
                    (None, Some(_)) => std::cmp::Ordering::Greater,
                    (None, None) => std::cmp::Ordering::Equal,
                })
                .then_with(|| a.0.cmp(b.0))
        });
        rows.into_iter()
            .take(top_n)
            .enumerate()
            .map(|(i, (player, standing))| LeaderboardEntry {
                rank: i + 1,
                player_id: player.clone(),
                score: standing.score,
                last_scored_at: standing.last_scored_at,
            })
            .collect()
    }
}
