//! Core library of the biaslab media-bias workbench.
//!
//! The crate covers the full offline pipeline:
//!
//! - [`corpus`]: sentence and outlet ingestion, distant labels derived from
//!   outlet leaning, deterministic splits and the distant/gold overlap guard.
//! - [`annotation`]: human sentence- and word-level annotations with
//!   annotator profiles, majority-vote gold labels and MBIC-style CSV export.
//! - [`agreement`]: Krippendorff's alpha, Fleiss' kappa and percent agreement.
//! - [`textprep`]: the pinned word tokenizer, vocabularies and encoding.
//! - [`model`]: a compact mean-pooled classifier trained on binary
//!   cross-entropy with a two-stage distant-pretrain / gold-finetune regime.
//! - [`evaluation`]: standard and sliced metrics.
//! - [`game`]: the four-round annotation game state machine.
//!
//! [`workbench::Workbench`] ties the stores together into one serializable
//! state, which the service crate persists and exposes over HTTP.

pub mod agreement;
pub mod annotation;
pub mod corpus;
pub mod evaluation;
pub mod game;
pub mod model;
pub mod textprep;
pub mod types;
pub mod workbench;

pub use types::{AnnotatorId, Label, OutletId, SentenceId, SessionId};
pub use workbench::Workbench;
