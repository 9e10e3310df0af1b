//! HTTP surface for the operator console.
//!
//! Every handler takes the one lock, so mutations are serialized and a step
//! never interleaves with another call. Mutating calls publish to the oracle
//! ledger and are consumed at once, which journals them as queued commands;
//! they take effect at the next day step. Controls apply immediately.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use sdc_core::cashflow::ObligationStatus;
use sdc_core::date::CalendarDate;
use sdc_core::engine::{AnswerError, Command, ControlCommand};
use sdc_core::event::RawObservation;
use sdc_core::party::PartyId;
use sdc_core::replica::{Datum, Harness, HarnessError};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::io;

/// Longest a pending-authorization poll may wait.
pub const MAX_WAIT_MS: u64 = 30_000;

pub struct Gateway {
    live: Mutex<Live>,
    changed: watch::Sender<u64>,
}

struct Live {
    harness: Harness,
    tokens: BTreeMap<String, PartyId>,
    /// First day to step when nothing has been stepped yet.
    start: CalendarDate,
    persist: Option<PathBuf>,
    persisted: usize,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    detail: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), detail: None }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(d) = self.detail {
            body["detail"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<HarnessError> for ApiError {
    fn from(e: HarnessError) -> Self {
        let status = match &e {
            HarnessError::HarnessStopped | HarnessError::AlreadyStopped | HarnessError::Paused => StatusCode::CONFLICT,
            HarnessError::OutOfOrderDate { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let detail = match &e {
            HarnessError::DivergenceDetected(d) => serde_json::to_value(d).ok(),
            _ => None,
        };
        ApiError { status, message: e.to_string(), detail }
    }
}

impl From<io::IoError> for ApiError {
    fn from(e: io::IoError) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

impl Gateway {
    /// `persist`, when given, is a directory that receives `journal.jsonl`
    /// and `ledger.jsonl` after every mutation.
    pub fn new(
        harness: Harness,
        tokens: BTreeMap<String, PartyId>,
        start: CalendarDate,
        persist: Option<PathBuf>,
    ) -> Result<Arc<Gateway>, io::IoError> {
        let len = harness.primary().journal().len() as u64;
        if let Some(dir) = &persist {
            io::write_journal(&dir.join("journal.jsonl"), harness.primary().journal().entries())?;
            io::write_ledger(&dir.join("ledger.jsonl"), harness.ledger())?;
        }
        let live = Live { harness, tokens, start, persist, persisted: len as usize };
        let (changed, _) = watch::channel(len);
        Ok(Arc::new(Gateway { live: Mutex::new(live), changed }))
    }

    fn lock(&self) -> MutexGuard<'_, Live> {
        // a panicking handler cannot leave the harness half-stepped: feeds
        // run to completion before any journal is read
        self.live.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` with the harness and then persists and wakes pollers.
    fn mutate<T>(&self, f: impl FnOnce(&mut Harness) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let mut live = self.lock();
        let out = f(&mut live.harness);
        live.save()?;
        self.changed.send_replace(live.harness.primary().journal().len() as u64);
        out
    }

    fn party(&self, headers: &HeaderMap) -> Result<PartyId, ApiError> {
        let token = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "missing bearer token"))?;
        self.lock()
            .tokens
            .get(token.trim())
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unknown credential"))
    }
}

impl Live {
    fn save(&mut self) -> Result<(), io::IoError> {
        let Some(dir) = &self.persist else { return Ok(()) };
        let entries = self.harness.primary().journal().entries();
        io::append_journal(&dir.join("journal.jsonl"), &entries[self.persisted..])?;
        self.persisted = entries.len();
        io::write_ledger(&dir.join("ledger.jsonl"), self.harness.ledger())
    }
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/state", get(state))
        .route("/obligations", get(obligations))
        .route("/events", get(events))
        .route("/authorizations/pending", get(pending))
        .route("/authorizations/{id}/answer", post(answer))
        .route("/observations", post(observation))
        .route("/control/{action}", post(control))
        .route("/journal", get(journal))
        .route("/step", post(step))
        .route("/replicas", get(replicas))
        .with_state(gateway)
}

pub async fn serve(addr: &str, gateway: Arc<Gateway>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(gateway)).await
}

fn head(h: &Harness) -> (u64, String) {
    let j = h.primary().journal();
    (j.len() as u64, j.head_hex())
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<Option<T>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    serde_json::from_slice(body).map(Some).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

/// Publishes one command and consumes it, so it is journaled as queued.
fn queue(h: &mut Harness, command: Command) -> ApiResult {
    let ledger_seq = h.publish(Datum::Command { command })?;
    h.step_all(ledger_seq)?;
    let (seq, digest) = head(h);
    Ok(Json(json!({ "status": "queued", "ledger_seq": ledger_seq.to_string(), "seq": seq.to_string(), "digest": digest })))
}

async fn state(State(g): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult {
    g.party(&headers)?;
    let live = g.lock();
    Ok(Json(serde_json::to_value(live.harness.primary().snapshot()).expect("snapshot serializes")))
}

#[derive(Deserialize)]
struct StatusQuery {
    status: Option<String>,
}

async fn obligations(State(g): State<Arc<Gateway>>, headers: HeaderMap, Query(q): Query<StatusQuery>) -> ApiResult {
    g.party(&headers)?;
    let status: Option<ObligationStatus> = q
        .status
        .map(|s| serde_json::from_value(Value::String(s.clone())))
        .transpose()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "unknown obligation status"))?;
    let live = g.lock();
    let e = live.harness.primary();
    let (seq, digest) = head(&live.harness);
    let payments: Vec<_> = e.obligations().values().filter(|o| status.is_none_or(|s| o.status == s)).collect();
    let deliveries: Vec<_> = e.deliveries().values().filter(|o| status.is_none_or(|s| o.status == s)).collect();
    Ok(Json(json!({ "seq": seq.to_string(), "digest": digest, "obligations": payments, "deliveries": deliveries })))
}

async fn events(State(g): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult {
    g.party(&headers)?;
    let live = g.lock();
    let (seq, digest) = head(&live.harness);
    let events: Vec<_> = live.harness.primary().events().records.values().collect();
    Ok(Json(json!({ "seq": seq.to_string(), "digest": digest, "events": events })))
}

#[derive(Deserialize)]
struct PollQuery {
    /// Wait until the journal grows past this length.
    since: Option<u64>,
    wait_ms: Option<u64>,
}

async fn pending(State(g): State<Arc<Gateway>>, headers: HeaderMap, Query(q): Query<PollQuery>) -> ApiResult {
    let party = g.party(&headers)?;
    if let Some(since) = q.since {
        let mut rx = g.changed.subscribe();
        let wait = Duration::from_millis(q.wait_ms.unwrap_or(MAX_WAIT_MS).min(MAX_WAIT_MS));
        // timing out just means nothing changed
        let _ = tokio::time::timeout(wait, rx.wait_for(|len| *len > since)).await;
    }
    let live = g.lock();
    let (seq, digest) = head(&live.harness);
    let requests: Vec<_> = live.harness.primary().pending_authorizations().filter(|r| r.addressee == party).collect();
    Ok(Json(json!({ "seq": seq.to_string(), "digest": digest, "party": party, "requests": requests })))
}

#[derive(Deserialize)]
struct AnswerBody {
    response: String,
}

async fn answer(State(g): State<Arc<Gateway>>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let party = g.party(&headers)?;
    let body: AnswerBody =
        parse_body(&body)?.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing answer body"))?;
    g.mutate(|h| {
        h.primary().check_answer(&id, &party, &body.response).map_err(|e| {
            let status = match e {
                AnswerError::UnknownRequest(_) => StatusCode::NOT_FOUND,
                AnswerError::WrongParty { .. } => StatusCode::UNAUTHORIZED,
                AnswerError::AlreadyAnswered(_) => StatusCode::CONFLICT,
                AnswerError::NotInMenu { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            };
            ApiError::new(status, e.to_string())
        })?;
        queue(h, Command::Answer { request_id: id.clone(), party: party.clone(), response: body.response.clone() })
    })
}

async fn observation(State(g): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let party = g.party(&headers)?;
    let mut raw: RawObservation =
        parse_body(&body)?.ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "missing observation body"))?;
    let command = if raw.kind == "cure" {
        let event_id = raw
            .payload
            .get("event_id")
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "a cure needs payload.event_id"))?;
        Command::Cure { event_id, by: Some(party) }
    } else {
        raw.notifier = Some(party);
        Command::Observe { observation: raw }
    };
    g.mutate(|h| queue(h, command))
}

#[derive(Deserialize)]
struct ControlBody {
    reason: Option<String>,
}

async fn control(State(g): State<Arc<Gateway>>, headers: HeaderMap, Path(action): Path<String>, body: Bytes) -> ApiResult {
    let party = g.party(&headers)?;
    let reason = parse_body::<ControlBody>(&body)?.and_then(|b| b.reason);
    let control = match action.as_str() {
        "pause" => ControlCommand::Pause,
        "resume" => ControlCommand::Resume,
        "stop" => ControlCommand::Stop { reason: reason.unwrap_or_else(|| format!("stopped by {party}")) },
        other => return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown control {other:?}"))),
    };
    g.mutate(|h| {
        let report = match control {
            ControlCommand::Pause => h.pause_all(Some(party))?,
            ControlCommand::Resume => h.resume_all(Some(party))?,
            ControlCommand::Stop { reason } => h.stop_all(&reason, Some(party))?,
        };
        Ok(Json(json!({ "mode": h.primary().mode(), "report": report })))
    })
}

#[derive(Deserialize)]
struct JournalQuery {
    from: Option<u64>,
}

async fn journal(State(g): State<Arc<Gateway>>, headers: HeaderMap, Query(q): Query<JournalQuery>) -> ApiResult {
    g.party(&headers)?;
    let live = g.lock();
    let (seq, digest) = head(&live.harness);
    let entries = live.harness.primary().journal().since(q.from.unwrap_or(1));
    Ok(Json(json!({ "seq": seq.to_string(), "digest": digest, "entries": entries })))
}

#[derive(Deserialize)]
struct StepBody {
    date: Option<CalendarDate>,
}

/// Steps one day: the given date, else the day after the last step.
async fn step(State(g): State<Arc<Gateway>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    g.party(&headers)?;
    let requested = parse_body::<StepBody>(&body)?.and_then(|b| b.date);
    let start = g.lock().start;
    g.mutate(|h| {
        let date = requested.unwrap_or_else(|| h.primary().last_date().map_or(start, |d| d.succ()));
        let report = h.feed(Datum::StepDay { date })?;
        Ok(Json(json!({ "date": date, "report": report })))
    })
}

async fn replicas(State(g): State<Arc<Gateway>>, headers: HeaderMap) -> ApiResult {
    g.party(&headers)?;
    let live = g.lock();
    Ok(Json(json!({ "replicas": live.harness.states(), "divergence": live.harness.divergence() })))
}
