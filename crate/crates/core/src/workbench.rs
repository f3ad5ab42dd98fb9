//! All mutable workbench state in one serializable value.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationStore;
use crate::corpus::Corpus;
use crate::game::{Feedback, GameConfig, GameEngine, GameError, GameSession, Served};
use crate::model::Checkpoint;
use crate::textprep::Tokenizer;
use crate::types::{AnnotatorId, Label, SentenceId, SessionId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workbench {
    pub tokenizer: Tokenizer,
    pub corpus: Corpus,
    pub annotations: AnnotationStore,
    pub game: GameEngine,
    /// Loaded checkpoints by model id.
    pub models: BTreeMap<String, Checkpoint>,
}

impl Default for Workbench {
    fn default() -> Self {
        Self::new(Tokenizer::default(), GameConfig::default())
    }
}

impl Workbench {
    pub fn new(tokenizer: Tokenizer, game: GameConfig) -> Self {
        Self {
            annotations: AnnotationStore::new(&tokenizer),
            tokenizer,
            corpus: Corpus::new(),
            game: GameEngine::new(game),
            models: BTreeMap::new(),
        }
    }

    pub fn start_session(&mut self, player: &AnnotatorId, now: DateTime<Utc>) -> Result<GameSession, GameError> {
        self.game.start_session(player, &self.annotations, now).cloned()
    }

    pub fn serve_next(&mut self, session: &SessionId, now: DateTime<Utc>) -> Result<Served, GameError> {
        self.game
            .serve_next(session, &self.corpus, &self.annotations, &self.tokenizer, now)
    }

    pub fn submit_game_annotation(
        &mut self,
        session: &SessionId,
        sentence: &SentenceId,
        label: Label,
        biased_words: Vec<usize>,
        now: DateTime<Utc>,
    ) -> Result<Feedback, GameError> {
        self.game.submit_answer(
            session,
            sentence,
            label,
            biased_words,
            &self.corpus,
            &mut self.annotations,
            &self.tokenizer,
            now,
        )
    }

    pub fn submit_authored(&mut self, session: &SessionId, text: &str, now: DateTime<Utc>) -> Result<SentenceId, GameError> {
        self.game
            .submit_authored(session, text, &mut self.corpus, &self.tokenizer, now)
    }
}
