//! REST API over the store. Handlers translate requests into [`Command`]s
//! or read-only library calls; responses are the library results serialized
//! as-is.
//!
//! Mutations are serialized through the store's write lock. Reads take the
//! read lock and see the latest committed state.

use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use biaslab_core::agreement::{self, AgreementError, AgreementReport, ReliabilityMatrix, Statistic};
use biaslab_core::annotation::{AnnotationError, AnnotationKey, AnnotationRecord, AnnotatorProfile, SentenceLabel};
use biaslab_core::corpus::{CorpusError, CorpusKind, Outlet, Sentence, SentenceRecord};
use biaslab_core::evaluation::DEFAULT_THRESHOLD;
use biaslab_core::game::{Feedback, GameError, GameSession, LeaderboardEntry, Served};
use biaslab_core::model::Checkpoint;
use biaslab_core::{AnnotatorId, Label, SentenceId, SessionId};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::commands::{Command, CommandError, Outcome};
use crate::store::{Store, StoreError, SCHEMA_VERSION};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RwLock<Store>>,
    token: Arc<str>,
    clock: Clock,
}

impl AppState {
    pub fn new(store: Store, token: impl Into<String>) -> Self {
        Self::with_clock(store, token, Arc::new(Utc::now))
    }

    pub fn with_clock(store: Store, token: impl Into<String>, clock: Clock) -> Self {
        Self {
            store: Arc::new(RwLock::new(store)),
            token: token.into().into(),
            clock,
        }
    }

    pub fn store(&self) -> Arc<RwLock<Store>> {
        self.store.clone()
    }

    fn read(&self) -> RwLockReadGuard<'_, Store> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Store> {
        self.store.write().unwrap_or_else(|e| e.into_inner())
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    fn commit(&self, command: Command) -> Result<Outcome, ApiError> {
        Ok(self.write().commit(command)?)
    }

    fn authorize(&self, headers: &axum::http::HeaderMap) -> Result<(), ApiError> {
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        match given {
            Some(t) if t.as_bytes() == self.token.as_bytes() => Ok(()),
            Some(_) => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "invalid bearer token")),
            None => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(with = "status_code")]
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

mod status_code {
    use axum::http::StatusCode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &StatusCode, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_u16(s.as_u16())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<StatusCode, D::Error> {
        StatusCode::from_u16(u16::deserialize(de)?).map_err(serde::de::Error::custom)
    }
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.to_owned(),
            message: message.into(),
        }
    }

    fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, axum::Json(&self)).into_response()
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        let msg = e.to_string();
        match e {
            CorpusError::DuplicateOutlet(_) | CorpusError::DuplicateSentence { .. } => {
                Self::new(StatusCode::CONFLICT, "duplicate", msg)
            }
            CorpusError::UnknownSentence(_) => Self::not_found("unknown-sentence", msg),
            CorpusError::Io(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io", msg),
            _ => Self::unprocessable("invalid-corpus-data", msg),
        }
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let msg = e.to_string();
        match e {
            AnnotationError::ProfileConflict(_) => Self::new(StatusCode::CONFLICT, "profile-conflict", msg),
            AnnotationError::Io(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io", msg),
            _ => Self::unprocessable("invalid-annotation", msg),
        }
    }
}

impl From<GameError> for ApiError {
    fn from(e: GameError) -> Self {
        let msg = e.to_string();
        match e {
            GameError::UnknownSession(_) => Self::not_found("unknown-session", msg),
            GameError::UnknownPlayer(_) => Self::not_found("unknown-player", msg),
            GameError::Annotation(inner) => inner.into(),
            GameError::InvalidText(_) => Self::unprocessable("invalid-text", msg),
            GameError::NotAPlayer(_) => Self::new(StatusCode::CONFLICT, "not-a-player", msg),
            GameError::ActiveSessionExists { .. } => Self::new(StatusCode::CONFLICT, "active-session-exists", msg),
            GameError::NotActive { .. } => Self::new(StatusCode::CONFLICT, "session-not-active", msg),
            GameError::NotServed(_) => Self::new(StatusCode::CONFLICT, "not-served", msg),
            GameError::AlreadyAnswered(_) => Self::new(StatusCode::CONFLICT, "already-answered", msg),
            GameError::AuthoringLocked(_) => Self::new(StatusCode::CONFLICT, "authoring-locked", msg),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Command(CommandError::Corpus(e)) => e.into(),
            StoreError::Command(CommandError::Annotation(e)) => e.into(),
            StoreError::Command(CommandError::Game(e)) => e.into(),
            StoreError::Command(e @ CommandError::ModelExists(_)) => Self::new(StatusCode::CONFLICT, "duplicate", e.to_string()),
            StoreError::Command(e @ CommandError::InvalidModelId(_)) => Self::unprocessable("invalid-model-id", e.to_string()),
            other => {
                log::error!("store failure: {other}");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "store", other.to_string())
            }
        }
    }
}

impl From<AgreementError> for ApiError {
    fn from(e: AgreementError) -> Self {
        Self::unprocessable("agreement-undefined", e.to_string())
    }
}

/// JSON body extractor whose rejections use the [`ApiError`] shape.
pub struct Json<T>(pub T);

impl<S, T> FromRequest<S> for Json<T>
where
    axum::Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Json(v)),
            Err(rejection) => Err(ApiError::new(StatusCode::BAD_REQUEST, "bad-request", rejection.body_text())),
        }
    }
}

/// Query-string extractor whose rejections use the [`ApiError`] shape.
pub struct Query<T>(pub T);

impl<S, T> FromRequestParts<S> for Query<T>
where
    axum::extract::Query<T>: FromRequestParts<S, Rejection = QueryRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        match axum::extract::Query::<T>::from_request_parts(parts, state).await {
            Ok(axum::extract::Query(v)) => Ok(Query(v)),
            Err(rejection) => Err(ApiError::new(StatusCode::BAD_REQUEST, "bad-request", rejection.body_text())),
        }
    }
}

impl<T: Serialize> IntoResponse for Json<T> {
    fn into_response(self) -> Response {
        axum::Json(self.0).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Created<T> = Result<(StatusCode, Json<T>), ApiError>;

fn created<T>(value: T) -> Created<T> {
    Ok((StatusCode::CREATED, Json(value)))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/outlets", get(list_outlets).post(add_outlet))
        .route("/sentences", get(list_sentences).post(add_sentences))
        .route("/profiles", get(list_profiles).post(upsert_profile))
        .route("/annotations", get(list_annotations).post(add_annotation))
        .route("/models", get(list_models).post(register_model))
        .route("/classify", post(classify))
        .route("/game/sessions", post(start_session))
        .route("/game/sessions/{id}", get(get_session))
        .route("/game/sessions/{id}/next", get(next_item))
        .route("/game/sessions/{id}/answer", post(answer))
        .route("/game/sessions/{id}/authored", post(authored))
        .route("/game/sessions/{id}/feedback", get(feedback))
        .route("/leaderboard", get(leaderboard))
        .route("/agreement", get(agreement_report))
        .fallback(|| async { ApiError::not_found("no-route", "no such route") })
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub schema_version: u32,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        schema_version: SCHEMA_VERSION,
    })
}

async fn list_outlets(State(s): State<AppState>) -> Json<Vec<Outlet>> {
    Json(s.read().workbench().corpus.outlets().cloned().collect())
}

async fn add_outlet(State(s): State<AppState>, headers: axum::http::HeaderMap, Json(outlet): Json<Outlet>) -> Created<Outlet> {
    s.authorize(&headers)?;
    s.commit(Command::AddOutlet { outlet: outlet.clone() })?;
    created(outlet)
}

#[derive(Debug, Clone, Deserialize)]
pub struct KindQuery {
    pub kind: Option<CorpusKind>,
}

async fn list_sentences(State(s): State<AppState>, Query(q): Query<KindQuery>) -> Json<Vec<Sentence>> {
    let store = s.read();
    let corpus = &store.workbench().corpus;
    Json(match q.kind {
        Some(kind) => corpus.sentences_of(kind).cloned().collect(),
        None => corpus.sentences().cloned().collect(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    pub kind: CorpusKind,
    pub records: Vec<SentenceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inserted {
    pub inserted: usize,
}

async fn add_sentences(State(s): State<AppState>, headers: axum::http::HeaderMap, Json(req): Json<IngestRequest>) -> Created<Inserted> {
    s.authorize(&headers)?;
    match s.commit(Command::IngestSentences {
        kind: req.kind,
        records: req.records,
    })? {
        Outcome::Count { count } => created(Inserted { inserted: count }),
        other => unreachable!("ingest returned {other:?}"),
    }
}

async fn list_profiles(State(s): State<AppState>) -> Json<Vec<AnnotatorProfile>> {
    Json(s.read().workbench().annotations.profiles().cloned().collect())
}

async fn upsert_profile(
    State(s): State<AppState>,
    headers: axum::http::HeaderMap,
    Json(profile): Json<AnnotatorProfile>,
) -> Created<AnnotatorProfile> {
    s.authorize(&headers)?;
    s.commit(Command::UpsertProfile { profile: profile.clone() })?;
    created(profile)
}

#[derive(Debug, Clone, Deserialize)]
pub struct SentenceQuery {
    pub sentence: Option<SentenceId>,
}

async fn list_annotations(State(s): State<AppState>, Query(q): Query<SentenceQuery>) -> Json<Vec<AnnotationRecord>> {
    let store = s.read();
    let annotations = &store.workbench().annotations;
    Json(match q.sentence {
        Some(id) => annotations.records_for(&id).cloned().collect(),
        None => annotations.records().cloned().collect(),
    })
}

/// An annotation as posted by a client; the server stamps it when `timestamp` is absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub sentence_id: SentenceId,
    pub annotator_id: AnnotatorId,
    pub sentence_label: SentenceLabel,
    #[serde(default)]
    pub biased_words: Vec<usize>,
    #[serde(default)]
    pub timestamp: Option<DateTime<Utc>>,
}

async fn add_annotation(
    State(s): State<AppState>,
    headers: axum::http::HeaderMap,
    Json(req): Json<AnnotationRequest>,
) -> Created<AnnotationKey> {
    s.authorize(&headers)?;
    let record = AnnotationRecord {
        sentence_id: req.sentence_id,
        annotator_id: req.annotator_id,
        sentence_label: req.sentence_label,
        biased_words: req.biased_words,
        timestamp: req.timestamp.unwrap_or_else(|| s.now()),
    };
    match s.commit(Command::SubmitAnnotation { record })? {
        Outcome::Annotation(key) => created(key),
        other => unreachable!("annotation returned {other:?}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub checksum: String,
    pub vocabulary: String,
    pub max_length: usize,
}

async fn list_models(State(s): State<AppState>) -> Json<Vec<ModelInfo>> {
    let store = s.read();
    Json(
        store
            .workbench()
            .models
            .iter()
            .map(|(id, c)| ModelInfo {
                id: id.clone(),
                checksum: c.model.checksum(),
                vocabulary: c.model.vocabulary.clone(),
                max_length: c.max_length,
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegisterModelRequest {
    pub id: String,
    /// Checkpoint in its text format.
    pub checkpoint: String,
}

async fn register_model(
    State(s): State<AppState>,
    headers: axum::http::HeaderMap,
    Json(req): Json<RegisterModelRequest>,
) -> Created<ModelInfo> {
    s.authorize(&headers)?;
    let checkpoint = Checkpoint::from_text(&req.checkpoint).map_err(|e| ApiError::unprocessable("invalid-checkpoint", e.to_string()))?;
    let info = ModelInfo {
        id: req.id.clone(),
        checksum: checkpoint.model.checksum(),
        vocabulary: checkpoint.model.vocabulary.clone(),
        max_length: checkpoint.max_length,
    };
    s.commit(Command::RegisterModel {
        id: req.id,
        checkpoint: Box::new(checkpoint),
    })?;
    created(info)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub model_id: String,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub model_id: String,
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
}

async fn classify(State(s): State<AppState>, Json(req): Json<ClassifyRequest>) -> ApiResult<ClassifyResponse> {
    let store = s.read();
    let checkpoint = store
        .workbench()
        .models
        .get(&req.model_id)
        .ok_or_else(|| ApiError::not_found("unknown-model", format!("unknown model `{}`", req.model_id)))?;
    if let Some(i) = req.texts.iter().position(|t| t.trim().is_empty()) {
        return Err(ApiError::unprocessable("empty-text", format!("text at index {i} is empty")));
    }
    let scores = req
        .texts
        .iter()
        .map(|t| checkpoint.score(t))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "model", e.to_string()))?;
    let labels = scores
        .iter()
        .map(|&p| if p >= DEFAULT_THRESHOLD { Label::Biased } else { Label::Neutral })
        .collect();
    Ok(Json(ClassifyResponse {
        model_id: req.model_id,
        scores,
        labels,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartSessionRequest {
    pub player_id: AnnotatorId,
}

async fn start_session(
    State(s): State<AppState>,
    headers: axum::http::HeaderMap,
    Json(req): Json<StartSessionRequest>,
) -> Created<GameSession> {
    s.authorize(&headers)?;
    match s.commit(Command::StartSession {
        player: req.player_id,
        at: s.now(),
    })? {
        Outcome::Session(session) => created(*session),
        other => unreachable!("start returned {other:?}"),
    }
}

async fn get_session(State(s): State<AppState>, Path(id): Path<SessionId>) -> ApiResult<GameSession> {
    let store = s.read();
    store
        .workbench()
        .game
        .session(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| GameError::UnknownSession(id).into())
}

/// Serving an item changes session state, so it is authenticated like any mutation.
async fn next_item(State(s): State<AppState>, headers: axum::http::HeaderMap, Path(id): Path<SessionId>) -> ApiResult<Served> {
    s.authorize(&headers)?;
    match s.commit(Command::ServeNext { session: id, at: s.now() })? {
        Outcome::Served(served) => Ok(Json(served)),
        other => unreachable!("serve returned {other:?}"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub sentence_id: SentenceId,
    pub label: Label,
    #[serde(default)]
    pub biased_words: Vec<usize>,
}

async fn answer(
    State(s): State<AppState>,
    headers: axum::http::HeaderMap,
    Path(id): Path<SessionId>,
    Json(req): Json<AnswerRequest>,
) -> ApiResult<Feedback> {
    s.authorize(&headers)?;
    match s.commit(Command::SubmitAnswer {
        session: id,
        sentence: req.sentence_id,
        label: req.label,
        biased_words: req.biased_words,
        at: s.now(),
    })? {
        Outcome::Feedback(fb) => Ok(Json(fb)),
        other => unreachable!("answer returned {other:?}"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthoredRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthoredResponse {
    pub sentence_id: SentenceId,
}

async fn authored(
    State(s): State<AppState>,
    headers: axum::http::HeaderMap,
    Path(id): Path<SessionId>,
    Json(req): Json<AuthoredRequest>,
) -> Created<AuthoredResponse> {
    s.authorize(&headers)?;
    match s.commit(Command::SubmitAuthored {
        session: id,
        text: req.text,
        at: s.now(),
    })? {
        Outcome::Authored { sentence_id } => created(AuthoredResponse { sentence_id }),
        other => unreachable!("authoring returned {other:?}"),
    }
}

async fn feedback(State(s): State<AppState>, Path(id): Path<SessionId>) -> ApiResult<Vec<Feedback>> {
    let store = s.read();
    Ok(Json(store.workbench().game.feedback(&id)?.to_vec()))
}

#[derive(Debug, Clone, Deserialize)]
pub struct TopQuery {
    pub top: Option<usize>,
}

pub const DEFAULT_LEADERBOARD_SIZE: usize = 10;

async fn leaderboard(State(s): State<AppState>, Query(q): Query<TopQuery>) -> Json<Vec<LeaderboardEntry>> {
    Json(s.read().workbench().game.leaderboard(q.top.unwrap_or(DEFAULT_LEADERBOARD_SIZE)))
}

#[derive(Debug, Clone, Deserialize)]
pub struct StatQuery {
    pub stat: Statistic,
}

async fn agreement_report(State(s): State<AppState>, Query(q): Query<StatQuery>) -> ApiResult<AgreementReport> {
    let store = s.read();
    let matrix = ReliabilityMatrix::from_records(store.workbench().annotations.records())?;
    Ok(Json(agreement::compute(q.stat, &matrix)?))
}

/// Periodically abandons idle sessions.
pub fn spawn_expiry(state: AppState, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut ticker = tokio::time::interval(every);
        ticker.tick().await;
        loop {
            ticker.tick().await;
            let now = state.now();
            let mut store = state.write();
            let has_active = store
                .workbench()
                .game
                .sessions()
                .any(|sess| sess.state == biaslab_core::game::SessionState::Active);
            if has_active {
                if let Err(e) = store.commit(Command::ExpireIdle { at: now }) {
                    log::warn!("session expiry failed: {e}");
                }
            }
        }
    })
}

/// Flushes a final snapshot; called on graceful shutdown.
pub fn flush(state: &AppState) -> Result<(), StoreError> {
    state.write().snapshot()
}
