//! Drives the router with a scripted request corpus and checks every
//! response against the same call made directly on a library replica.
#![allow(dead_code)]

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use biaslab_core::agreement::{self, ReliabilityMatrix, Statistic};
use biaslab_core::annotation::{AnnotationRecord, SentenceLabel};
use biaslab_core::corpus::CorpusKind;
use biaslab_core::evaluation::DEFAULT_THRESHOLD;
use biaslab_core::game::Served;
use biaslab_core::{AnnotatorId, Label, SentenceId, SessionId, Workbench};
use biaslab_service::api::{self, AppState};
use biaslab_service::store::Store;
use chrono::{DateTime, Duration, Utc};
use http_body_util::BodyExt;
use serde::Serialize;
use serde_json::{json, Value};
use tower::ServiceExt;

use super::fixture;

pub struct Harness {
    pub app: Router,
    pub state: AppState,
    pub replica: Workbench,
    clock: Arc<AtomicI64>,
    pub checked: usize,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

impl Harness {
    pub fn new(dir: &std::path::Path) -> Self {
        let clock = Arc::new(AtomicI64::new(0));
        let c = clock.clone();
        let store = Store::open(dir).expect("store opens");
        let state = AppState::with_clock(
            store,
            fixture::TOKEN,
            Arc::new(move || fixture::t0() + Duration::seconds(c.load(Ordering::SeqCst))),
        );
        Self {
            app: api::router(state.clone()),
            state,
            replica: Workbench::default(),
            clock,
            checked: 0,
        }
    }

    /// Advances the shared clock and returns the instant the next request will see.
    pub fn tick(&self) -> DateTime<Utc> {
        let s = self.clock.fetch_add(7, Ordering::SeqCst) + 7;
        fixture::t0() + Duration::seconds(s)
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>, auth: bool) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if auth {
            req = req.header("authorization", format!("Bearer {}", fixture::TOKEN));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    /// Asserts status and body equality; returns the body.
    pub async fn expect(
        &mut self,
        method: &str,
        uri: &str,
        body: Option<Value>,
        status: StatusCode,
        expected: Value,
    ) -> Result<Value, String> {
        let (got_status, got) = self.call(method, uri, body, true).await;
        if got_status != status || got != expected {
            return Err(format!("{method} {uri}: got {got_status} {got}, expected {status} {expected}"));
        }
        self.checked += 1;
        Ok(got)
    }

    /// Asserts an error response with the full error shape.
    pub async fn expect_error(
        &mut self,
        method: &str,
        uri: &str,
        body: Option<Value>,
        auth: bool,
        status: StatusCode,
    ) -> Result<Value, String> {
        let (got_status, got) = self.call(method, uri, body, auth).await;
        let shaped = got.get("status").and_then(Value::as_u64) == Some(u64::from(status.as_u16()))
            && got.get("code").is_some_and(Value::is_string)
            && got.get("message").is_some_and(Value::is_string);
        if got_status != status || !shaped {
            return Err(format!("{method} {uri}: expected error {status}, got {got_status} {got}"));
        }
        self.checked += 1;
        Ok(got)
    }

    /// The server's committed workbench equals the replica.
    pub fn states_match(&self) -> Result<(), String> {
        let store = self.state.store();
        let guard = store.read().unwrap();
        if guard.workbench() != &self.replica {
            return Err("server state diverged from the library replica".into());
        }
        Ok(())
    }
}

fn player_label(sentence: &SentenceId, player: usize) -> Label {
    let n: usize = sentence.as_str().bytes().map(usize::from).sum();
    if (n + player).is_multiple_of(3) {
        Label::Neutral
    } else {
        Label::Biased
    }
}

/// Runs the whole request corpus. Returns the number of checked responses.
pub async fn run_corpus(h: &mut Harness) -> Result<usize, String> {
    // Health and auth.
    h.expect("GET", "/health", None, StatusCode::OK, json!({"status": "ok", "schema_version": 1})).await?;
    let outlets = fixture::outlets();
    h.expect_error("POST", "/outlets", Some(to_value(&outlets[0])), false, StatusCode::UNAUTHORIZED).await?;
    let (s, _) = h.call("POST", "/outlets", Some(to_value(&outlets[0])), false).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);

    // Outlets.
    for o in &outlets {
        h.replica.corpus.add_outlet(o.clone()).unwrap();
        h.expect("POST", "/outlets", Some(to_value(o)), StatusCode::CREATED, to_value(o)).await?;
    }
    assert!(h.replica.corpus.add_outlet(outlets[0].clone()).is_err());
    h.expect_error("POST", "/outlets", Some(to_value(&outlets[0])), true, StatusCode::CONFLICT).await?;
    let want = to_value(&h.replica.corpus.outlets().collect::<Vec<_>>());
    h.expect("GET", "/outlets", None, StatusCode::OK, want).await?;

    // Sentences.
    for (kind, records) in [
        (CorpusKind::Gold, fixture::gold(12)),
        (CorpusKind::Unlabeled, fixture::unlabeled(12)),
        (CorpusKind::Distant, fixture::distant(9)),
    ] {
        let n = h.replica.corpus.insert_records(records.clone(), kind).unwrap();
        let body = json!({"kind": kind, "records": records});
        h.expect("POST", "/sentences", Some(body), StatusCode::CREATED, json!({"inserted": n})).await?;
    }
    let mut bad = fixture::unlabeled(1);
    bad[0].id = "x0".into();
    bad[0].outlet = "nowhere".into();
    assert!(h.replica.corpus.clone().insert_records(bad.clone(), CorpusKind::Unlabeled).is_err());
    h.expect_error("POST", "/sentences", Some(json!({"kind": "unlabeled", "records": bad})), true, StatusCode::UNPROCESSABLE_ENTITY)
        .await?;
    h.expect_error("POST", "/sentences", Some(json!({"kind": "gold", "records": fixture::gold(1)})), true, StatusCode::CONFLICT)
        .await?;
    for kind in [CorpusKind::Gold, CorpusKind::Unlabeled, CorpusKind::Distant] {
        let want = to_value(&h.replica.corpus.sentences_of(kind).collect::<Vec<_>>());
        h.expect("GET", &format!("/sentences?kind={kind}"), None, StatusCode::OK, want).await?;
    }
    let want = to_value(&h.replica.corpus.sentences().collect::<Vec<_>>());
    h.expect("GET", "/sentences", None, StatusCode::OK, want).await?;
    h.expect_error("GET", "/sentences?kind=nonsense", None, true, StatusCode::BAD_REQUEST).await?;

    // Profiles.
    for p in fixture::profiles() {
        h.replica.annotations.upsert_profile(p.clone()).unwrap();
        h.expect("POST", "/profiles", Some(to_value(&p)), StatusCode::CREATED, to_value(&p)).await?;
    }
    let want = to_value(&h.replica.annotations.profiles().collect::<Vec<_>>());
    h.expect("GET", "/profiles", None, StatusCode::OK, want).await?;

    // Expert annotations on the gold sentences.
    let gold: Vec<_> = h.replica.corpus.sentences_of(CorpusKind::Gold).cloned().collect();
    for s in &gold {
        let at = h.tick();
        let label = s.label.unwrap();
        let words = if label == Label::Biased { vec![2] } else { vec![] };
        let record = AnnotationRecord {
            sentence_id: s.id.clone(),
            annotator_id: "expert".into(),
            sentence_label: label.into(),
            biased_words: words.clone(),
            timestamp: at,
        };
        let key = h.replica.annotations.submit(record, &h.replica.corpus, &h.replica.tokenizer).unwrap();
        let body = json!({"sentence_id": s.id, "annotator_id": "expert", "sentence_label": label, "biased_words": words, "timestamp": at});
        h.expect("POST", "/annotations", Some(body), StatusCode::CREATED, to_value(&key)).await?;
    }
    let bad = json!({"sentence_id": "g1", "annotator_id": "p0", "sentence_label": "neutral", "biased_words": [1]});
    h.expect_error("POST", "/annotations", Some(bad.clone()), false, StatusCode::UNAUTHORIZED).await?;
    h.expect_error("POST", "/annotations", Some(bad), true, StatusCode::UNPROCESSABLE_ENTITY).await?;
    let unknown = json!({"sentence_id": "nope", "annotator_id": "p0", "sentence_label": "biased"});
    h.expect_error("POST", "/annotations", Some(unknown), true, StatusCode::UNPROCESSABLE_ENTITY).await?;
    h.expect_error("POST", "/annotations", Some(json!({"sentence_id": 5})), true, StatusCode::BAD_REQUEST).await?;
    // A player's direct annotation of an unlabeled sentence, stamped by the server clock.
    let at = h.tick();
    let key = h
        .replica
        .annotations
        .submit(
            AnnotationRecord {
                sentence_id: "u1".into(),
                annotator_id: "p2".into(),
                sentence_label: SentenceLabel::Skip,
                biased_words: vec![],
                timestamp: at,
            },
            &h.replica.corpus,
            &h.replica.tokenizer,
        )
        .unwrap();
    let body = json!({"sentence_id": "u1", "annotator_id": "p2", "sentence_label": "skip"});
    h.expect("POST", "/annotations", Some(body), StatusCode::CREATED, to_value(&key)).await?;
    for q in ["g0", "g3", "u1", "missing"] {
        let want = to_value(&h.replica.annotations.records_for(&q.into()).collect::<Vec<_>>());
        h.expect("GET", &format!("/annotations?sentence={q}"), None, StatusCode::OK, want).await?;
    }
    let want = to_value(&h.replica.annotations.records().collect::<Vec<_>>());
    h.expect("GET", "/annotations", None, StatusCode::OK, want).await?;

    // Models and classification.
    let ckpt = fixture::checkpoint();
    h.replica.models.insert("m1".into(), ckpt.clone());
    let info = json!({
        "id": "m1",
        "checksum": ckpt.model.checksum(),
        "vocabulary": ckpt.model.vocabulary,
        "max_length": ckpt.max_length,
    });
    h.expect("POST", "/models", Some(json!({"id": "m1", "checkpoint": ckpt.to_text()})), StatusCode::CREATED, info.clone())
        .await?;
    h.expect_error("POST", "/models", Some(json!({"id": "m1", "checkpoint": ckpt.to_text()})), true, StatusCode::CONFLICT).await?;
    h.expect_error("POST", "/models", Some(json!({"id": "m2", "checkpoint": "garbage"})), true, StatusCode::UNPROCESSABLE_ENTITY)
        .await?;
    h.expect("GET", "/models", None, StatusCode::OK, json!([info])).await?;

    let classify = |texts: &[String]| {
        let scores: Vec<f64> = texts.iter().map(|t| ckpt.score(t).unwrap()).collect();
        let labels: Vec<Label> = scores
            .iter()
            .map(|&p| if p >= DEFAULT_THRESHOLD { Label::Biased } else { Label::Neutral })
            .collect();
        json!({"model_id": "m1", "scores": scores, "labels": labels})
    };
    let one = vec!["The senator shamefully slashed the budget".to_owned()];
    h.expect("POST", "/classify", Some(json!({"model_id": "m1", "texts": one})), StatusCode::OK, classify(&one)).await?;
    h.expect("POST", "/classify", Some(json!({"model_id": "m1", "texts": []})), StatusCode::OK, classify(&[])).await?;
    let batch: Vec<String> = (0..100)
        .map(|i| format!("{} officials {} plan {i}", ["reckless", "calm", "radical", "new"][i % 4], ["said", "cut"][i % 2]))
        .collect();
    let got = h
        .expect("POST", "/classify", Some(json!({"model_id": "m1", "texts": batch})), StatusCode::OK, classify(&batch))
        .await?;
    // Batch results equal one-at-a-time requests.
    for (i, text) in batch.iter().enumerate().step_by(9) {
        let (_, single) = h.call("POST", "/classify", Some(json!({"model_id": "m1", "texts": [text]})), false).await;
        if single["scores"][0] != got["scores"][i] {
            return Err(format!("batch item {i} differs from a single request"));
        }
    }
    h.expect_error("POST", "/classify", Some(json!({"model_id": "nope", "texts": ["x"]})), false, StatusCode::NOT_FOUND).await?;
    let err = h
        .expect_error("POST", "/classify", Some(json!({"model_id": "m1", "texts": ["ok", "  "]})), false, StatusCode::UNPROCESSABLE_ENTITY)
        .await?;
    if !err["message"].as_str().unwrap_or_default().contains("index 1") {
        return Err(format!("empty-text error does not name the index: {err}"));
    }

    // Game.
    h.expect_error("POST", "/game/sessions", Some(json!({"player_id": "p0"})), false, StatusCode::UNAUTHORIZED).await?;
    h.expect_error("POST", "/game/sessions", Some(json!({"player_id": "ghost"})), true, StatusCode::NOT_FOUND).await?;
    h.expect_error("POST", "/game/sessions", Some(json!({"player_id": "expert"})), true, StatusCode::CONFLICT).await?;
    h.expect_error("GET", "/game/sessions/s-999/next", None, true, StatusCode::NOT_FOUND).await?;
    h.expect_error("GET", "/game/sessions/s-999/next", None, false, StatusCode::UNAUTHORIZED).await?;

    let mut sessions: Vec<SessionId> = Vec::new();
    for (pi, player) in fixture::PLAYERS.iter().enumerate() {
        let pid: AnnotatorId = (*player).into();
        let at = h.tick();
        let session = h.replica.start_session(&pid, at).unwrap();
        h.expect("POST", "/game/sessions", Some(json!({"player_id": player})), StatusCode::CREATED, to_value(&session))
            .await?;
        let sid = session.id.clone();
        h.tick();
        h.expect_error("POST", "/game/sessions", Some(json!({"player_id": player})), true, StatusCode::CONFLICT).await?;
        // Answering an item that was never served.
        let body = json!({"sentence_id": "g0", "label": "biased"});
        h.expect_error("POST", &format!("/game/sessions/{sid}/answer"), Some(body), true, StatusCode::CONFLICT).await?;
        h.expect_error("POST", &format!("/game/sessions/{sid}/authored"), Some(json!({"text": "too early"})), true, StatusCode::CONFLICT)
            .await?;

        for step in 0..80 {
            let at = h.tick();
            let served = h.replica.serve_next(&sid, at).unwrap();
            h.expect("GET", &format!("/game/sessions/{sid}/next"), None, StatusCode::OK, to_value(&served)).await?;
            match served {
                Served::Completed => break,
                Served::TutorialStep { .. } => {}
                Served::AuthoringPrompt { .. } => {
                    let text = format!("Player {player} says the reckless plan {step} failed");
                    let at = h.tick();
                    let id = h.replica.submit_authored(&sid, &text, at).unwrap();
                    h.expect(
                        "POST",
                        &format!("/game/sessions/{sid}/authored"),
                        Some(json!({"text": text})),
                        StatusCode::CREATED,
                        json!({"sentence_id": id}),
                    )
                    .await?;
                    h.expect_error("POST", &format!("/game/sessions/{sid}/authored"), Some(json!({"text": "   "})), true, StatusCode::UNPROCESSABLE_ENTITY)
                        .await?;
                }
                Served::Item { sentence_id, tokens, .. } => {
                    let label = player_label(&sentence_id, pi);
                    let words = if label == Label::Biased { vec![tokens.len() - 1] } else { vec![] };
                    let at = h.tick();
                    let fb = h
                        .replica
                        .submit_game_annotation(&sid, &sentence_id, label, words.clone(), at)
                        .unwrap();
                    let body = json!({"sentence_id": sentence_id, "label": label, "biased_words": words});
                    h.expect("POST", &format!("/game/sessions/{sid}/answer"), Some(body.clone()), StatusCode::OK, to_value(&fb))
                        .await?;
                    h.expect_error("POST", &format!("/game/sessions/{sid}/answer"), Some(body), true, StatusCode::CONFLICT)
                        .await?;
                }
            }
        }
        let want = to_value(h.replica.game.session(&sid).unwrap());
        h.expect("GET", &format!("/game/sessions/{sid}"), None, StatusCode::OK, want).await?;
        sessions.push(sid);
    }
    for sid in &sessions {
        let want = to_value(&h.replica.game.feedback(sid).unwrap());
        h.expect("GET", &format!("/game/sessions/{sid}/feedback"), None, StatusCode::OK, want).await?;
        let (s, _) = h.call("GET", &format!("/game/sessions/{sid}/next"), None, true).await;
        if s != StatusCode::CONFLICT {
            return Err(format!("serving a finished session returned {s}"));
        }
        h.checked += 1;
    }
    h.expect_error("GET", "/game/sessions/s-999", None, false, StatusCode::NOT_FOUND).await?;
    h.expect_error("GET", "/game/sessions/s-999/feedback", None, false, StatusCode::NOT_FOUND).await?;

    // Leaderboard.
    let want = to_value(&h.replica.game.leaderboard(api::DEFAULT_LEADERBOARD_SIZE));
    h.expect("GET", "/leaderboard", None, StatusCode::OK, want).await?;
    for top in [0, 1, 2, 50] {
        let want = to_value(&h.replica.game.leaderboard(top));
        h.expect("GET", &format!("/leaderboard?top={top}"), None, StatusCode::OK, want).await?;
    }

    // Agreement reports.
    let matrix = ReliabilityMatrix::from_records(h.replica.annotations.records()).unwrap();
    for stat in [Statistic::KrippendorffAlphaNominal, Statistic::FleissKappa, Statistic::PercentAgreement] {
        let name = to_value(&stat);
        let uri = format!("/agreement?stat={}", name.as_str().unwrap());
        match agreement::compute(stat, &matrix) {
            Ok(report) => {
                h.expect("GET", &uri, None, StatusCode::OK, to_value(&report)).await?;
            }
            Err(_) => {
                h.expect_error("GET", &uri, None, false, StatusCode::UNPROCESSABLE_ENTITY).await?;
            }
        }
    }
    h.expect_error("GET", "/agreement?stat=cohen", None, false, StatusCode::BAD_REQUEST).await?;
    h.expect_error("GET", "/no/such/route", None, false, StatusCode::NOT_FOUND).await?;

    h.states_match()?;
    Ok(h.checked)
}
