//! HTTP session API.
//!
//! Requests for one session are serialized by that session's lock; distinct
//! sessions proceed concurrently over the shared, read-only engine.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{Mutex, RwLock};

use rxdialog::engine::{CandidateView, Engine, EngineError, PatientStub, Session, SystemResponse, UserInput, Warning};
use rxdialog::policy::{Awaiting, Button};
use rxdialog::taxonomy::PrescriptionFrame;

use crate::eventlog::EventSink;

pub type Clock = Arc<dyn Fn() -> f64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0))
}

pub struct AppState {
    pub engine: Arc<Engine>,
    pub sink: Arc<EventSink>,
    pub clock: Clock,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(engine: Engine, sink: EventSink, clock: Clock) -> Arc<Self> {
        Arc::new(Self { engine: Arc::new(engine), sink: Arc::new(sink), clock, sessions: RwLock::new(HashMap::new()) })
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::NotFound(id.to_string()))
    }
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Terminal(String),
    Malformed(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, msg) = match self {
            Self::NotFound(id) => (StatusCode::NOT_FOUND, format!("unknown session `{id}`")),
            Self::Terminal(id) => (StatusCode::CONFLICT, format!("session `{id}` is over")),
            Self::Malformed(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            Self::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (code, Json(json!({ "error": msg }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Terminal(id) => Self::Terminal(id),
            EngineError::NoChoiceExpected | EngineError::ChoiceOutOfRange { .. } | EngineError::EmptyUtterance => {
                Self::Malformed(e.to_string())
            }
            other => Self::Internal(other.to_string()),
        }
    }
}

/// JSON body; an empty body reads as `{}`. Any decoding failure is a 422.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let raw: &[u8] = if bytes.iter().all(u8::is_ascii_whitespace) { b"{}" } else { bytes };
    serde_json::from_slice(raw).map_err(|e| ApiError::Malformed(format!("malformed body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub participant_id: Option<String>,
    #[serde(default)]
    pub patient: Option<PatientStub>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceBody {
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChoiceBody {
    index: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ButtonBody {
    button: Button,
    #[serde(default)]
    comment: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub session_id: String,
    pub turn_index: usize,
    pub response: SystemResponse,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: Option<String>,
    pub turn_index: usize,
    pub terminal: bool,
    pub validated: bool,
    pub frame: PrescriptionFrame,
    pub candidates: Vec<CandidateView>,
    pub awaiting: Option<Awaiting>,
    pub last_action: Option<String>,
    pub warnings: Vec<Warning>,
}

fn view(s: &Session) -> SessionView {
    SessionView {
        session_id: s.id.clone(),
        participant_id: s.participant.clone(),
        turn_index: s.turn_index,
        terminal: s.state.terminal,
        validated: s.state.frame.confirmed,
        frame: s.state.frame.clone(),
        candidates: s
            .state
            .candidates
            .iter()
            .enumerate()
            .map(|(index, r)| CandidateView {
                index,
                ucd_code: r.ucd_code.clone(),
                label: r.label(),
                form: r.form.clone(),
                route: r.route.clone(),
            })
            .collect(),
        awaiting: s.state.awaiting.clone(),
        last_action: s.state.last_action.clone(),
        warnings: s.state.warnings.clone(),
    }
}

fn new_session_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

async fn create_session(State(app): State<Arc<AppState>>, bytes: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = body(&bytes)?;
    let id = new_session_id();
    let (session, ev) =
        app.engine.start_session(id.clone(), req.participant_id, req.patient.unwrap_or_default(), (app.clock)());
    app.sink.append(&[ev]).map_err(|e| ApiError::Internal(format!("event log: {e}")))?;
    app.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id, "turn_index": 0 }))).into_response())
}

async fn step(app: &AppState, id: &str, input: UserInput) -> Result<Json<Envelope>, ApiError> {
    let session = app.session(id).await?;
    let mut s = session.lock().await;
    let engine = Arc::clone(&app.engine);
    let now = (app.clock)();
    let out = engine.step_at(&mut s, &input, now)?;
    app.sink.append(&out.events).map_err(|e| ApiError::Internal(format!("event log: {e}")))?;
    Ok(Json(Envelope { session_id: s.id.clone(), turn_index: s.turn_index, response: out.response }))
}

async fn utterance(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    bytes: Bytes,
) -> Result<Json<Envelope>, ApiError> {
    app.session(&id).await?;
    let b: UtteranceBody = body(&bytes)?;
    step(&app, &id, UserInput::Utterance { text: b.text }).await
}

async fn choice(State(app): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> Result<Json<Envelope>, ApiError> {
    app.session(&id).await?;
    let b: ChoiceBody = body(&bytes)?;
    step(&app, &id, UserInput::Choice { index: b.index }).await
}

async fn button(State(app): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> Result<Json<Envelope>, ApiError> {
    app.session(&id).await?;
    let b: ButtonBody = body(&bytes)?;
    step(&app, &id, UserInput::Button { button: b.button, comment: b.comment }).await
}

async fn state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let session = app.session(&id).await?;
    let s = session.lock().await;
    Ok(Json(view(&s)))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/utterance", post(utterance))
        .route("/sessions/{id}/choice", post(choice))
        .route("/sessions/{id}/button", post(button))
        .route("/sessions/{id}/state", get(state))
        .with_state(app)
}
