//! Chat-completion backends.
//!
//! [`HttpBackend`] speaks the common `/chat/completions` JSON shape and
//! retries transient failures; [`ScriptedBackend`] replays canned responses
//! for tests and demos. Every backend keeps [`CallStats`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    /// Empty means "use the backend's configured model".
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout: Duration,
    /// Accounting bucket (the goal kind). Never sent over the wire.
    pub tag: Option<String>,
}

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            model: String::new(),
            messages,
            temperature: 0.0,
            max_tokens: Some(DEFAULT_MAX_TOKENS),
            timeout: Duration::from_secs(60),
            tag: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("at least one message is required".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == Some(0) {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Concatenated content of all messages, used for script matching.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    /// May be empty; an empty response stops the agent loop.
    pub content: String,
    pub finish_reason: String,
    pub usage: Usage,
    /// Wall-clock time including retries; zero for scripted replies.
    #[serde(default, with = "duration_ms")]
    pub latency: Duration,
}

/// Call accounting. `calls` counts completions that reached a decision
/// (success or terminal error); transport retries are counted separately.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub calls: u64,
    pub retries: u64,
    #[serde(with = "duration_ms")]
    pub total_latency: Duration,
    pub per_role: BTreeMap<String, u64>,
}

impl CallStats {
    pub fn role(&self, role: &str) -> u64 {
        self.per_role.get(role).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &CallStats) {
        self.calls += other.calls;
        self.retries += other.retries;
        self.total_latency += other.total_latency;
        for (k, v) in &other.per_role {
            *self.per_role.entry(k.clone()).or_default() += v;
        }
    }

    pub fn record(&mut self, tag: Option<&str>, retries: u64, latency: Duration) {
        self.calls += 1;
        self.retries += retries;
        self.total_latency += latency;
        if let Some(tag) = tag {
            *self.per_role.entry(tag.to_string()).or_default() += 1;
        }
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("credentials missing: environment variable `{0}` is not set")]
    MissingCredentials(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script exhausted at call {call}: no entry matches the request")]
    ScriptExhausted { call: usize },
    #[error("scripted failure: {0}")]
    Scripted(String),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Point-in-time copy of the call statistics.
    fn stats(&self) -> CallStats;
}

pub fn snapshot_stats(backend: &dyn ChatBackend) -> CallStats {
    backend.stats()
}

// ---------------------------------------------------------------------------
// Scripted backend

/// How a script entry selects requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMatch {
    /// Matches the n-th call (0-based) to this backend.
    Index(usize),
    /// Matches when the request text contains the substring.
    Contains(String),
    /// Matches when the request text contains every substring.
    AllOf(Vec<String>),
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptReply {
    Text(String),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(rename = "match")]
    pub matcher: ScriptMatch,
    pub reply: ScriptReply,
    /// Repeating entries are never consumed.
    #[serde(default)]
    pub repeat: bool,
}

impl ScriptEntry {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatch::Contains(needle.into()),
            reply: ScriptReply::Text(response.into()),
            repeat: false,
        }
    }

    pub fn at(index: usize, response: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatch::Index(index),
            reply: ScriptReply::Text(response.into()),
            repeat: false,
        }
    }

    pub fn any(response: impl Into<String>) -> Self {
        Self {
            matcher: ScriptMatch::Any,
            reply: ScriptReply::Text(response.into()),
            repeat: false,
        }
    }

    pub fn repeating(mut self) -> Self {
        self.repeat = true;
        self
    }

    fn matches(&self, call: usize, text: &str) -> bool {
        match &self.matcher {
            ScriptMatch::Index(n) => *n == call,
            ScriptMatch::Contains(s) => text.contains(s.as_str()),
            ScriptMatch::AllOf(all) => all.iter().all(|s| text.contains(s.as_str())),
            ScriptMatch::Any => true,
        }
    }
}

#[derive(Debug, Default)]
struct ScriptState {
    calls: usize,
    consumed: Vec<bool>,
    stats: CallStats,
}

/// Deterministic backend: each request takes the first unconsumed entry
/// that matches it. Requests with no match fail with
/// [`BackendError::ScriptExhausted`].
#[derive(Debug)]
pub struct ScriptedBackend {
    name: String,
    script: Vec<ScriptEntry>,
    state: Mutex<ScriptState>,
}

impl ScriptedBackend {
    pub fn new(name: impl Into<String>, script: Vec<ScriptEntry>) -> Self {
        let consumed = vec![false; script.len()];
        Self {
            name: name.into(),
            script,
            state: Mutex::new(ScriptState {
                consumed,
                ..Default::default()
            }),
        }
    }

    /// Entries answering calls 0, 1, 2, ... in order.
    pub fn sequence(name: impl Into<String>, responses: &[&str]) -> Self {
        let script = responses
            .iter()
            .enumerate()
            .map(|(i, r)| ScriptEntry::at(i, *r))
            .collect();
        Self::new(name, script)
    }

    pub fn from_json_file(name: impl Into<String>, path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let script: Vec<ScriptEntry> = serde_json::from_str(&text)?;
        Ok(Self::new(name, script))
    }

    pub fn script(&self) -> &[ScriptEntry] {
        &self.script
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let text = request.text();
        let mut state = self.state.lock().expect("script state poisoned");
        let call = state.calls;
        state.calls += 1;
        let found = self
            .script
            .iter()
            .enumerate()
            .find(|(i, e)| !state.consumed[*i] && e.matches(call, &text));
        let Some((idx, entry)) = found else {
            return Err(BackendError::ScriptExhausted { call });
        };
        if !entry.repeat {
            state.consumed[idx] = true;
        }
        state
            .stats
            .record(request.tag.as_deref(), 0, Duration::ZERO);
        match &entry.reply {
            ScriptReply::Text(content) => Ok(ChatResponse {
                content: content.clone(),
                finish_reason: "stop".into(),
                usage: Usage::default(),
                latency: Duration::ZERO,
            }),
            ScriptReply::Error(msg) => Err(BackendError::Scripted(msg.clone())),
        }
    }

    fn stats(&self) -> CallStats {
        self.state.lock().expect("script state poisoned").stats.clone()
    }
}

// ---------------------------------------------------------------------------
// HTTP backend

fn default_temperature() -> f64 {
    0.0
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_max_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Total attempts per completion, first try included.
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// First backoff delay; doubles on each retry.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: api_key_env.into(),
            temperature: default_temperature(),
            timeout_secs: default_timeout_secs(),
            max_attempts: default_max_attempts(),
            backoff_ms: default_backoff_ms(),
            max_tokens: default_max_tokens(),
        }
    }
}

pub struct HttpBackend {
    name: String,
    config: HttpConfig,
    client: reqwest::Client,
    stats: Mutex<CallStats>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(Result<ChatResponse, BackendError>),
    Retry(BackendError),
}

impl HttpBackend {
    pub fn new(name: impl Into<String>, config: HttpConfig) -> Self {
        Self {
            name: name.into(),
            config,
            client: reqwest::Client::new(),
            stats: Mutex::new(CallStats::default()),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    async fn attempt(&self, key: &str, body: &WireRequest<'_>, timeout: Duration) -> Attempt {
        let sent = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(key)
            .timeout(timeout)
            .json(body)
            .send()
            .await;
        let resp = match sent {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout { attempts: 0 }),
            Err(e) if e.is_connect() => return Attempt::Retry(BackendError::Transport(e.to_string())),
            Err(e) => return Attempt::Done(Err(BackendError::Transport(e.to_string()))),
        };
        let status = resp.status();
        if status.as_u16() == 429 {
            return Attempt::Retry(BackendError::RateLimited { attempts: 0 });
        }
        let body = match resp.text().await {
            Ok(b) => b,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout { attempts: 0 }),
            Err(e) => return Attempt::Done(Err(BackendError::Transport(e.to_string()))),
        };
        if status.is_server_error() {
            return Attempt::Retry(BackendError::Http {
                status: status.as_u16(),
                body,
            });
        }
        if !status.is_success() {
            return Attempt::Done(Err(BackendError::Http {
                status: status.as_u16(),
                body,
            }));
        }
        Attempt::Done(parse_wire_response(&body))
    }
}

fn parse_wire_response(body: &str) -> Result<ChatResponse, BackendError> {
    let parsed: WireResponse =
        serde_json::from_str(body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::MalformedResponse("no choices".into()))?;
    Ok(ChatResponse {
        content: choice.message.content.unwrap_or_default(),
        finish_reason: choice.finish_reason.unwrap_or_else(|| "unknown".into()),
        usage: parsed.usage.unwrap_or_default(),
        latency: Duration::ZERO,
    })
}

#[async_trait]
impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let key = std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| BackendError::MissingCredentials(self.config.api_key_env.clone()))?;
        request.validate()?;

        let model = if request.model.is_empty() {
            self.config.model.as_str()
        } else {
            request.model.as_str()
        };
        let body = WireRequest {
            model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens.or(Some(self.config.max_tokens)),
        };
        let timeout = request
            .timeout
            .min(Duration::from_secs(self.config.timeout_secs.max(1)));
        let attempts = self.config.max_attempts.max(1);

        let started = Instant::now();
        let mut retries = 0u64;
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let result = loop {
            match self.attempt(&key, &body, timeout).await {
                Attempt::Done(r) => break r,
                Attempt::Retry(err) => {
                    let used = retries as u32 + 1;
                    if used >= attempts {
                        break Err(match err {
                            BackendError::Timeout { .. } => BackendError::Timeout { attempts: used },
                            BackendError::RateLimited { .. } => {
                                BackendError::RateLimited { attempts: used }
                            }
                            other => other,
                        });
                    }
                    tracing::debug!(backend = %self.name, error = %err, "retrying after {:?}", delay);
                    tokio::time::sleep(delay).await;
                    delay *= 2;
                    retries += 1;
                }
            }
        };
        self.stats
            .lock()
            .expect("stats poisoned")
            .record(request.tag.as_deref(), retries, started.elapsed());
        result.map(|mut r| {
            r.latency = started.elapsed();
            r
        })
    }

    fn stats(&self) -> CallStats {
        self.stats.lock().expect("stats poisoned").clone()
    }
}

// ---------------------------------------------------------------------------
// Registry

/// Backend definition as it appears in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Http(HttpConfig),
    Scripted {
        #[serde(default)]
        script_file: Option<String>,
        #[serde(default)]
        script: Vec<ScriptEntry>,
    },
    /// The built-in demo script.
    Demo,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BackendsConfig {
    #[serde(default)]
    pub backends: BTreeMap<String, BackendSpec>,
}

#[derive(Debug, Error)]
#[error("unknown backend `{0}`")]
pub struct UnknownBackend(pub String);

/// Named, shared backend handles.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: HashMap<String, Arc<dyn ChatBackend>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry holding only the built-in `demo` backend.
    pub fn with_demo() -> Self {
        let mut reg = Self::new();
        reg.insert("demo", Arc::new(crate::demo::demo_backend("demo")));
        reg
    }

    /// Builds every configured backend; relative script paths resolve
    /// against `base_dir`. The `demo` backend is always available.
    pub fn from_config(config: &BackendsConfig, base_dir: &Path) -> anyhow::Result<Self> {
        let mut reg = Self::with_demo();
        for (name, spec) in &config.backends {
            let backend: Arc<dyn ChatBackend> = match spec {
                BackendSpec::Http(cfg) => Arc::new(HttpBackend::new(name, cfg.clone())),
                BackendSpec::Scripted {
                    script_file,
                    script,
                } => {
                    let mut entries = script.clone();
                    if let Some(file) = script_file {
                        let loaded = ScriptedBackend::from_json_file(name, &base_dir.join(file))?;
                        entries.extend(loaded.script().iter().cloned());
                    }
                    Arc::new(ScriptedBackend::new(name, entries))
                }
                BackendSpec::Demo => Arc::new(crate::demo::demo_backend(name)),
            };
            reg.insert(name, backend);
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: BackendsConfig = toml::from_str(&text)?;
        Self::from_config(&config, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn insert(&mut self, name: impl Into<String>, backend: Arc<dyn ChatBackend>) {
        self.backends.insert(name.into(), backend);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ChatBackend>, UnknownBackend> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<_> = self.backends.keys().cloned().collect();
        names.sort();
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::user(text)])
    }

    #[tokio::test]
    async fn scripted_lookup_and_stats() {
        let b = ScriptedBackend::new("s", vec![ScriptEntry::contains("hello", "world")]);
        let r = b.complete(&req("say hello")).await.unwrap();
        assert_eq!(r.content, "world");
        assert_eq!(b.stats().calls, 1);
    }

    #[tokio::test]
    async fn scripted_exhaustion() {
        let b = ScriptedBackend::sequence("s", &["one"]);
        b.complete(&req("x")).await.unwrap();
        assert_eq!(
            b.complete(&req("x")).await,
            Err(BackendError::ScriptExhausted { call: 1 })
        );
    }

    #[tokio::test]
    async fn scripted_runs_are_deterministic() {
        async fn run() -> Vec<String> {
            let b = ScriptedBackend::new(
                "s",
                vec![
                    ScriptEntry::contains("b", "B1"),
                    ScriptEntry::any("fallback").repeating(),
                    ScriptEntry::contains("b", "B2"),
                ],
            );
            let mut out = Vec::new();
            for t in ["a", "b", "b", "c"] {
                out.push(b.complete(&req(t)).await.unwrap().content);
            }
            out
        }
        let first = run().await;
        assert_eq!(first, vec!["fallback", "B1", "fallback", "fallback"]);
        assert_eq!(first, run().await);
    }

    #[tokio::test]
    async fn scripted_error_counts_as_call() {
        let b = ScriptedBackend::new(
            "s",
            vec![ScriptEntry {
                matcher: ScriptMatch::Any,
                reply: ScriptReply::Error("boom".into()),
                repeat: false,
            }],
        );
        assert!(matches!(b.complete(&req("x")).await, Err(BackendError::Scripted(_))));
        assert_eq!(b.stats().calls, 1);
    }

    #[tokio::test]
    async fn snapshot_is_a_copy() {
        let b = ScriptedBackend::new("s", vec![ScriptEntry::any("r").repeating()]);
        for _ in 0..3 {
            b.complete(&req("x").with_tag("classify_question")).await.unwrap();
        }
        let snap = snapshot_stats(&b);
        assert_eq!(snap.calls, 3);
        b.complete(&req("x")).await.unwrap();
        assert_eq!(snap.calls, 3);
        assert_eq!(b.stats().calls, 4);
        assert_eq!(snap.role("classify_question"), 3);
    }

    #[tokio::test]
    async fn missing_credentials_before_network() {
        let cfg = HttpConfig::new("http://127.0.0.1:9/never", "m", "QTX_TEST_UNSET_KEY_VAR");
        let b = HttpBackend::new("live", cfg);
        assert_eq!(
            b.complete(&req("x")).await,
            Err(BackendError::MissingCredentials("QTX_TEST_UNSET_KEY_VAR".into()))
        );
        assert_eq!(b.stats().calls, 0);
    }

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new(vec![]).validate().is_err());
        let mut r = req("x");
        r.temperature = -1.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn wire_response_parsing() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let r = parse_wire_response(ok).unwrap();
        assert_eq!(r.content, "hi");
        assert_eq!(r.usage.prompt_tokens, 3);
        assert!(matches!(
            parse_wire_response(r#"{"choices":[]}"#),
            Err(BackendError::MalformedResponse(_))
        ));
        assert!(matches!(
            parse_wire_response("nope"),
            Err(BackendError::MalformedResponse(_))
        ));
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: BackendsConfig = toml::from_str(
            r#"
            [backends.gpt]
            kind = "http"
            endpoint = "https://example.invalid/v1/chat/completions"
            model = "gpt-3.5-turbo"
            api_key_env = "OPENAI_API_KEY"

            [backends.replay]
            kind = "scripted"
            script = [{ match = "any", reply = { text = "Answer: 42" }, repeat = true }]
            "#,
        )
        .unwrap();
        let reg = BackendRegistry::from_config(&cfg, Path::new(".")).unwrap();
        assert_eq!(reg.names(), vec!["demo", "gpt", "replay"]);
        assert!(reg.get("nope").is_err());
        match &cfg.backends["gpt"] {
            BackendSpec::Http(h) => {
                assert_eq!(h.max_attempts, 3);
                assert_eq!(h.backoff_ms, 500);
            }
            _ => panic!("expected http"),
        }
    }
}
