//! Every state change is a [`Command`]. Commands carry their own timestamps
//! so replaying the log reproduces the workbench exactly.

use biaslab_core::annotation::{AnnotationError, AnnotationKey, AnnotationRecord, AnnotatorProfile};
use biaslab_core::corpus::{CorpusError, CorpusKind, DistantLabelSummary, Outlet, OutletRule, SentenceRecord};
use biaslab_core::game::{Feedback, GameError, GameSession, Served};
use biaslab_core::model::Checkpoint;
use biaslab_core::{AnnotatorId, Label, SentenceId, SessionId, Workbench};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Command {
    AddOutlet {
        outlet: Outlet,
    },
    IngestSentences {
        kind: CorpusKind,
        records: Vec<SentenceRecord>,
    },
    AssignDistantLabels {
        rule: OutletRule,
    },
    SetGoldLabels {
        labels: Vec<(SentenceId, Label)>,
    },
    UpsertProfile {
        profile: AnnotatorProfile,
    },
    SubmitAnnotation {
        record: AnnotationRecord,
    },
    ImportAnnotations {
        csv: String,
    },
    StartSession {
        player: AnnotatorId,
        at: DateTime<Utc>,
    },
    ServeNext {
        session: SessionId,
        at: DateTime<Utc>,
    },
    SubmitAnswer {
        session: SessionId,
        sentence: SentenceId,
        label: Label,
        biased_words: Vec<usize>,
        at: DateTime<Utc>,
    },
    SubmitAuthored {
        session: SessionId,
        text: String,
        at: DateTime<Utc>,
    },
    ExpireIdle {
        at: DateTime<Utc>,
    },
    RegisterModel {
        id: String,
        checkpoint: Box<Checkpoint>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Outcome {
    Outlet(Outlet),
    Count { count: usize },
    Distant(DistantLabelSummary),
    Profile(AnnotatorProfile),
    Annotation(AnnotationKey),
    Session(Box<GameSession>),
    Served(Served),
    Feedback(Feedback),
    Authored { sentence_id: SentenceId },
    Expired { sessions: Vec<SessionId> },
    Model { id: String, checksum: String },
}

#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("model `{0}` is already registered")]
    ModelExists(String),
    #[error("invalid model id `{0}`")]
    InvalidModelId(String),
}

pub fn apply(wb: &mut Workbench, command: &Command) -> Result<Outcome, CommandError> {
    Ok(match command {
        Command::AddOutlet { outlet } => {
            wb.corpus.add_outlet(outlet.clone())?;
            Outcome::Outlet(outlet.clone())
        }
        Command::IngestSentences { kind, records } => Outcome::Count {
            count: wb.corpus.insert_records(records.clone(), *kind)?,
        },
        Command::AssignDistantLabels { rule } => Outcome::Distant(wb.corpus.assign_distant_labels(rule)?),
        Command::SetGoldLabels { labels } => {
            if let Some((id, _)) = labels.iter().find(|(id, _)| wb.corpus.sentence(id).is_none()) {
                return Err(CorpusError::UnknownSentence(id.clone()).into());
            }
            for (id, label) in labels {
                wb.corpus.set_gold_label(id, *label)?;
            }
            Outcome::Count { count: labels.len() }
        }
        Command::UpsertProfile { profile } => {
            wb.annotations.upsert_profile(profile.clone())?;
            Outcome::Profile(profile.clone())
        }
        Command::SubmitAnnotation { record } => {
            Outcome::Annotation(wb.annotations.submit(record.clone(), &wb.corpus, &wb.tokenizer)?)
        }
        Command::ImportAnnotations { csv } => Outcome::Count {
            count: wb.annotations.import_csv(csv.as_bytes(), &wb.corpus, &wb.tokenizer)?,
        },
        Command::StartSession { player, at } => Outcome::Session(Box::new(wb.start_session(player, *at)?)),
        Command::ServeNext { session, at } => Outcome::Served(wb.serve_next(session, *at)?),
        Command::SubmitAnswer {
            session,
            sentence,
            label,
            biased_words,
            at,
        } => Outcome::Feedback(wb.submit_game_annotation(session, sentence, *label, biased_words.clone(), *at)?),
        Command::SubmitAuthored { session, text, at } => Outcome::Authored {
            sentence_id: wb.submit_authored(session, text, *at)?,
        },
        Command::ExpireIdle { at } => Outcome::Expired {
            sessions: wb.game.expire_idle(*at),
        },
        Command::RegisterModel { id, checkpoint } => {
            if id.trim().is_empty() || id.contains('/') {
                return Err(CommandError::InvalidModelId(id.clone()));
            }
            if wb.models.contains_key(id) {
                return Err(CommandError::ModelExists(id.clone()));
            }
            let checksum = checkpoint.model.checksum();
            wb.models.insert(id.clone(), (**checkpoint).clone());
            Outcome::Model { id: id.clone(), checksum }
        }
    })
}
