//! HTTP session service for live, human-in-the-loop sessions.
//!
//! ```text
//! POST   /sessions                  {mode, transducer_backend?, responder_backend?, turns?, background?}
//! POST   /sessions/{id}/messages    {text?, kind?}
//! GET    /sessions/{id}/transcript
//! DELETE /sessions/{id}
//! GET    /sessions/{id}/events      server-sent events, one per completed turn
//! ```
//!
//! Errors are `{"code": ..., "message": ...}`. Each session has its own
//! lock, so posts to one session run one at a time in arrival order.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex as StdMutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, Mutex, RwLock};

use crate::agent::{AgentConfig, AgentRuntime, PromptTemplates};
use crate::llm_backend::BackendRegistry;
use crate::pipeline::{
    answer_turn, interpret_human_text, HumanSource, Mode, PipelineError, Runtimes, SessionState,
    TurnRecord,
};
use crate::protocol::{open_question, Payload, TranscriptRecord};
use crate::transducer::Outcome;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
pub const DEFAULT_TURNS: usize = 3;

#[derive(Clone)]
pub struct ServiceConfig {
    pub registry: BackendRegistry,
    pub templates: Arc<PromptTemplates>,
    pub agent: AgentConfig,
    pub default_transducer_backend: String,
    pub default_responder_backend: String,
    pub default_turns: usize,
    pub idle_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(registry: BackendRegistry) -> Self {
        Self {
            registry,
            templates: Arc::new(PromptTemplates::default()),
            agent: AgentConfig::default(),
            default_transducer_backend: "demo".into(),
            default_responder_backend: "demo".into(),
            default_turns: DEFAULT_TURNS,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
        }
    }
}

pub struct SessionHandle {
    pub session_id: String,
    pub mode: Mode,
    pub created_at: u64,
    pub max_turns: usize,
    pub transducer_backend: String,
    pub responder_backend: String,
    pub state: Mutex<SessionState>,
    runtimes: Runtimes,
    last_active: StdMutex<Instant>,
    events: broadcast::Sender<SessionEvent>,
}

impl SessionHandle {
    fn touch(&self) {
        *self.last_active.lock().expect("last_active lock") = Instant::now();
    }

    fn idle_for(&self, now: Instant) -> Duration {
        now.saturating_duration_since(*self.last_active.lock().expect("last_active lock"))
    }
}

pub struct ServiceState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
}

impl ServiceState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub async fn session_count(&self) -> usize {
        self.sessions.read().await.len()
    }

    async fn get(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    /// Drops sessions idle for longer than the configured timeout. Returns
    /// how many were removed.
    pub async fn collect_idle(&self, now: Instant) -> usize {
        let mut sessions = self.sessions.write().await;
        let before = sessions.len();
        sessions.retain(|_, h| h.idle_for(now) <= self.config.idle_timeout);
        before - sessions.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub transducer_backend: Option<String>,
    #[serde(default)]
    pub responder_backend: Option<String>,
    #[serde(default)]
    pub turns: Option<usize>,
    #[serde(default)]
    pub background: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SessionInfo {
    pub session_id: String,
    pub mode: Mode,
    pub turns: usize,
    pub transducer_backend: String,
    pub responder_backend: String,
    /// Unix milliseconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Question,
    Statement,
    Answer,
    Terminate,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostMessageRequest {
    #[serde(default)]
    pub text: Option<String>,
    /// Omitted: inferred from the session state and the text.
    #[serde(default)]
    pub kind: Option<MessageKind>,
}

/// What a client needs to render one turn; every field comes from the
/// pipeline's turn record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TurnView {
    pub k: usize,
    pub human_text: String,
    pub human_kind: String,
    pub label: Option<String>,
    pub raw_label: Option<String>,
    pub explanation: Option<String>,
    pub outcome: Option<String>,
    pub resolved_question: Option<String>,
    pub clarifying_question: Option<String>,
    pub answer: Option<String>,
    pub llm_calls: u64,
    pub calls_by_role: BTreeMap<String, u64>,
    pub error: Option<String>,
}

impl From<&TurnRecord> for TurnView {
    fn from(r: &TurnRecord) -> Self {
        let t = r.transduction.as_ref();
        let (outcome, resolved) = match t.map(|t| &t.outcome) {
            Some(Outcome::Passthrough) => (Some("passthrough"), None),
            Some(Outcome::Resolved { question }) => (Some("resolved"), Some(question.clone())),
            Some(Outcome::Clarify { .. }) => (Some("clarify"), None),
            None => (None, None),
        };
        TurnView {
            k: r.k,
            human_text: r.human_message.texts().join("\n"),
            human_kind: r.human_message.kind().to_string(),
            // No badge when the classifier never ran (statement or answer turns).
            label: t.filter(|t| t.classified()).map(|t| t.label.as_str().to_string()),
            raw_label: t.and_then(|t| t.raw_label.clone()),
            explanation: t.map(|t| t.explanation.clone()).filter(|e| !e.is_empty()),
            outcome: outcome.map(String::from),
            resolved_question: resolved,
            clarifying_question: r.clarify_emitted.clone(),
            answer: r.answer.clone(),
            llm_calls: r.llm_calls_this_turn,
            calls_by_role: r.calls_by_role.clone(),
            error: r.error.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PostMessageResponse {
    pub session_id: String,
    pub terminated: bool,
    pub turn: Option<TurnView>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TranscriptResponse {
    pub session_id: String,
    pub mode: Mode,
    pub terminated: bool,
    pub transcript: Option<TranscriptRecord>,
    pub turns: Vec<TurnView>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Turn { turn: TurnView },
    Terminated,
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/transcript", get(get_transcript))
        .route("/sessions/{id}/events", get(session_events))
        .with_state(state)
}

/// Serves until the listener fails, collecting idle sessions once a minute.
pub async fn serve(addr: SocketAddr, state: Arc<ServiceState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let gc_state = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            let removed = gc_state.collect_idle(Instant::now()).await;
            if removed > 0 {
                tracing::info!(removed, "collected idle sessions");
            }
        }
    });
    axum::serve(listener, router(state)).await
}

async fn create_session(
    State(state): State<Arc<ServiceState>>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionInfo>), ApiError> {
    let Json(req) = body?;
    let cfg = &state.config;
    let mode = req.mode.unwrap_or(Mode::WithTransducer);
    let turns = req.turns.unwrap_or(cfg.default_turns);
    if turns == 0 {
        return Err(ApiError::bad_request("turns must be at least 1"));
    }
    let t_name = req.transducer_backend.unwrap_or_else(|| cfg.default_transducer_backend.clone());
    let r_name = req.responder_backend.unwrap_or_else(|| cfg.default_responder_backend.clone());
    let lookup = |name: &str| {
        cfg.registry
            .get(name)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "unknown_backend", e.to_string()))
    };
    let runtime = |backend| {
        AgentRuntime::new(backend)
            .with_templates(cfg.templates.clone())
            .with_config(cfg.agent.clone())
    };
    let runtimes = Runtimes {
        transducer: runtime(lookup(&t_name)?),
        responder: runtime(lookup(&r_name)?),
    };

    let session_id = uuid::Uuid::new_v4().to_string();
    let created_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let session = SessionState::new(session_id.clone(), mode, HumanSource::Live)
        .with_background(req.background);
    let (events, _) = broadcast::channel(64);
    let handle = Arc::new(SessionHandle {
        session_id: session_id.clone(),
        mode,
        created_at,
        max_turns: turns,
        transducer_backend: t_name.clone(),
        responder_backend: r_name.clone(),
        state: Mutex::new(session),
        runtimes,
        last_active: StdMutex::new(Instant::now()),
        events,
    });
    state.sessions.write().await.insert(session_id.clone(), handle);
    tracing::info!(session = %session_id, %mode, "session created");
    Ok((
        StatusCode::CREATED,
        Json(SessionInfo {
            session_id,
            mode,
            turns,
            transducer_backend: t_name,
            responder_backend: r_name,
            created_at,
        }),
    ))
}

fn explicit_payload(kind: MessageKind, text: &str, s: &SessionState) -> Payload {
    match kind {
        MessageKind::Question => {
            let next = s
                .transcript
                .iter()
                .filter_map(|m| m.payload.qid())
                .max()
                .unwrap_or(0)
                + 1;
            Payload::question(next, text)
        }
        MessageKind::Statement => Payload::statement(text),
        MessageKind::Answer => {
            let qid = s
                .pending_clarification()
                .or_else(|| open_question(&s.context).map(|(q, _)| q))
                .unwrap_or(1);
            Payload::answer(qid, text)
        }
        MessageKind::Terminate => Payload::Termination,
    }
}

async fn post_message(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    body: Result<Json<PostMessageRequest>, JsonRejection>,
) -> Result<Json<PostMessageResponse>, ApiError> {
    let Json(req) = body?;
    let handle = state.get(&id).await?;
    handle.touch();
    let mut session = handle.state.lock().await;
    if session.terminated {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "session_terminated",
            format!("session `{id}` is terminated"),
        ));
    }
    let text = req.text.as_deref().map(str::trim).unwrap_or("");
    if req.kind == Some(MessageKind::Terminate) {
        session.terminate();
        let _ = handle.events.send(SessionEvent::Terminated);
        return Ok(Json(PostMessageResponse {
            session_id: id,
            terminated: true,
            turn: None,
        }));
    }
    if text.is_empty() {
        return Err(ApiError::bad_request("text is required unless kind is terminate"));
    }
    let payload = match req.kind {
        Some(kind) => explicit_payload(kind, text, &session),
        None => interpret_human_text(text, &session),
    };
    let record = answer_turn(&mut session, payload, &handle.runtimes)
        .await
        .map_err(|e| match e {
            PipelineError::SessionTerminated(_) => {
                ApiError::new(StatusCode::CONFLICT, "session_terminated", e.to_string())
            }
            PipelineError::TerminationIsNotATurn => ApiError::bad_request(e.to_string()),
        })?;
    let view = TurnView::from(&record);
    let _ = handle.events.send(SessionEvent::Turn { turn: view.clone() });
    if session.turn >= handle.max_turns {
        session.terminate();
        let _ = handle.events.send(SessionEvent::Terminated);
    }
    handle.touch();
    Ok(Json(PostMessageResponse {
        session_id: id,
        terminated: session.terminated,
        turn: Some(view),
    }))
}

async fn get_transcript(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<Json<TranscriptResponse>, ApiError> {
    let handle = state.get(&id).await?;
    handle.touch();
    let session = handle.state.lock().await;
    Ok(Json(TranscriptResponse {
        session_id: id,
        mode: session.mode,
        terminated: session.terminated,
        transcript: session
            .transcript_interaction()
            .map(|i| TranscriptRecord::from(&i)),
        turns: session.records.iter().map(TurnView::from).collect(),
    }))
}

async fn delete_session(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let removed = state.sessions.write().await.remove(&id);
    match removed {
        Some(h) => {
            let _ = h.events.send(SessionEvent::Terminated);
            Ok(StatusCode::NO_CONTENT)
        }
        None => Err(ApiError::unknown_session(&id)),
    }
}

async fn session_events(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = state.get(&id).await?;
    let rx = handle.events.subscribe();
    let stream = futures::stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let done = ev == SessionEvent::Terminated;
                    let name = match &ev {
                        SessionEvent::Turn { .. } => "turn",
                        SessionEvent::Terminated => "terminated",
                    };
                    let event = Event::default()
                        .event(name)
                        .json_data(&ev)
                        .unwrap_or_else(|_| Event::default().event(name));
                    return Some((Ok(event), if done { None } else { Some(rx) }));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

#[cfg(test)]
mod tests {
    use axum::body::{to_bytes, Body};
    use axum::http::Request;
    use serde_json::{json, Value};
    use tower::ServiceExt;

    use super::*;
    use crate::demo::{DRAGON_FINAL_ANSWER, DRAGON_QUESTION};

    fn app() -> (Router, Arc<ServiceState>) {
        let state = ServiceState::new(ServiceConfig::new(BackendRegistry::with_demo()));
        (router(state.clone()), state)
    }

    async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
    }

    fn json_of(bytes: &[u8]) -> Value {
        serde_json::from_slice(bytes).unwrap()
    }

    async fn create(app: &Router, body: Value) -> String {
        let (status, bytes) = call(app, "POST", "/sessions", Some(body)).await;
        assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&bytes));
        json_of(&bytes)["session_id"].as_str().unwrap().to_string()
    }

    #[tokio::test]
    async fn distinct_session_ids_and_unknown_backend() {
        let (app, _) = app();
        let a = create(&app, json!({"mode": "with_transducer"})).await;
        let b = create(&app, json!({})).await;
        assert_ne!(a, b);
        let (status, bytes) = call(&app, "POST", "/sessions", Some(json!({"responder_backend": "nope"}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(json_of(&bytes)["code"], "unknown_backend");
    }

    #[tokio::test]
    async fn dragon_question_over_the_service() {
        let (app, _) = app();
        let id = create(&app, json!({"mode": "with_transducer"})).await;
        let (status, bytes) = call(
            &app,
            "POST",
            &format!("/sessions/{id}/messages"),
            Some(json!({"text": DRAGON_QUESTION})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        let v = json_of(&bytes);
        assert_eq!(v["turn"]["answer"], DRAGON_FINAL_ANSWER);
        assert_eq!(v["turn"]["label"], "normal");
        assert_eq!(v["turn"]["raw_label"], "complete");
    }

    #[tokio::test]
    async fn ambiguous_question_gets_clarified_then_answered() {
        let (app, _) = app();
        let id = create(&app, json!({"mode": "with_transducer"})).await;
        let uri = format!("/sessions/{id}/messages");
        let (_, bytes) = call(&app, "POST", &uri, Some(json!({"text": "Who scored the music for the film?"}))).await;
        let v = json_of(&bytes);
        assert_eq!(v["turn"]["label"], "ambiguous");
        assert!(v["turn"]["explanation"].as_str().is_some());
        assert_eq!(v["turn"]["clarifying_question"], "Which film do you mean?");
        assert!(v["turn"]["answer"].is_null());

        let (_, bytes) = call(&app, "POST", &uri, Some(json!({"text": "How to Train Your Dragon"}))).await;
        let v = json_of(&bytes);
        assert_eq!(v["turn"]["k"], 2);
        assert_eq!(v["turn"]["human_kind"], "answer");
        assert_eq!(v["turn"]["answer"], DRAGON_FINAL_ANSWER);
        assert!(v["turn"]["label"].is_null());

        let (status, first) = call(&app, "GET", &format!("/sessions/{id}/transcript"), None).await;
        assert_eq!(status, StatusCode::OK);
        let (_, second) = call(&app, "GET", &format!("/sessions/{id}/transcript"), None).await;
        assert_eq!(first, second);
        let t = json_of(&first);
        assert_eq!(t["turns"].as_array().unwrap().len(), 2);
        assert_eq!(t["transcript"]["messages"].as_array().unwrap().len(), 4);
        let line = serde_json::to_string(&t["transcript"]).unwrap();
        assert_eq!(crate::protocol::parse_transcript(&line).unwrap().len(), 2);
    }

    #[tokio::test]
    async fn terminate_then_post_is_rejected() {
        let (app, _) = app();
        let id = create(&app, json!({})).await;
        let uri = format!("/sessions/{id}/messages");
        let (status, bytes) = call(&app, "POST", &uri, Some(json!({"kind": "terminate"}))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(json_of(&bytes)["terminated"], true);
        let (status, bytes) = call(&app, "POST", &uri, Some(json!({"text": "hello?"}))).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_eq!(json_of(&bytes)["code"], "session_terminated");
    }

    #[tokio::test]
    async fn turn_limit_terminates() {
        let (app, _) = app();
        let id = create(&app, json!({"mode": "without_transducer", "turns": 1})).await;
        let uri = format!("/sessions/{id}/messages");
        let (_, bytes) = call(&app, "POST", &uri, Some(json!({"text": "Anything?"}))).await;
        assert_eq!(json_of(&bytes)["terminated"], true);
        let (status, _) = call(&app, "POST", &uri, Some(json!({"text": "More?"}))).await;
        assert_eq!(status, StatusCode::CONFLICT);
    }

    #[tokio::test]
    async fn unknown_session_and_bad_bodies() {
        let (app, _) = app();
        let (status, bytes) = call(&app, "GET", "/sessions/nope/transcript", None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(json_of(&bytes)["code"], "unknown_session");
        let (status, _) = call(&app, "DELETE", "/sessions/nope", None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);

        let id = create(&app, json!({})).await;
        let uri = format!("/sessions/{id}/messages");
        let (status, bytes) = call(&app, "POST", &uri, Some(json!({"txt": "typo"}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(json_of(&bytes)["code"], "invalid_request");
        let (status, _) = call(&app, "POST", &uri, Some(json!({"text": "   "}))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);

        let (status, _) = call(&app, "DELETE", &format!("/sessions/{id}"), None).await;
        assert_eq!(status, StatusCode::NO_CONTENT);
        let (status, _) = call(&app, "GET", &format!("/sessions/{id}/transcript"), None).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
    }

    #[tokio::test]
    async fn empty_transcript_before_first_turn() {
        let (app, _) = app();
        let id = create(&app, json!({})).await;
        let (_, bytes) = call(&app, "GET", &format!("/sessions/{id}/transcript"), None).await;
        let v = json_of(&bytes);
        assert!(v["transcript"].is_null());
        assert_eq!(v["turns"], json!([]));
    }

    #[tokio::test]
    async fn idle_sessions_are_collected() {
        let (app, state) = app();
        create(&app, json!({})).await;
        assert_eq!(state.collect_idle(Instant::now()).await, 0);
        let later = Instant::now() + DEFAULT_IDLE_TIMEOUT + Duration::from_secs(1);
        assert_eq!(state.collect_idle(later).await, 1);
        assert_eq!(state.session_count().await, 0);
    }
}
