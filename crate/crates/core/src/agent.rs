//! Goal-based LLM agent run as a zero-shot ReAct loop.
//!
//! Each iteration assembles a prompt from the goal instruction, the
//! background, the rendered context and any observations, calls the
//! backend, and tries to parse the goal's output format. A successful parse
//! achieves the goal; an empty response stops the loop; anything else adds an
//! observation and tries again, up to `max_iterations`.

use std::fmt;
use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_backend::{BackendError, ChatBackend, ChatMessage, ChatRequest, DEFAULT_MAX_TOKENS};
use crate::protocol::{open_question, Context, Payload};

pub const CLASSIFIER_INSTRUCTION: &str = include_str!("../templates/classifier.txt");
pub const RESOLVER_INSTRUCTION: &str = include_str!("../templates/resolver.txt");
pub const ANSWER_INSTRUCTION: &str = include_str!("../templates/answer.txt");

/// Appended to the observations after an unparseable response.
pub const FORMAT_NUDGE: &str =
    "Your previous output did not match the required format. Respond exactly in the required format.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    ClassifyQuestion,
    ResolveQuestion,
    AnswerQuestion,
}

impl GoalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GoalKind::ClassifyQuestion => "classify_question",
            GoalKind::ResolveQuestion => "resolve_question",
            GoalKind::AnswerQuestion => "answer_question",
        }
    }
}

impl fmt::Display for GoalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    pub kind: GoalKind,
    /// Instruction block, verbatim from the template.
    pub instruction: String,
    /// Extra inputs rendered after the instruction (e.g. the classifier's
    /// explanation for the resolver).
    pub notes: Vec<String>,
}

impl Goal {
    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }
}

/// Instruction texts for the three goals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub classifier: String,
    pub resolver: String,
    pub answer: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            classifier: CLASSIFIER_INSTRUCTION.to_string(),
            resolver: RESOLVER_INSTRUCTION.to_string(),
            answer: ANSWER_INSTRUCTION.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Defaults overridden by `classifier.txt`, `resolver.txt` and
    /// `answer.txt` in `dir`, where present.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut t = Self::default();
        for (file, slot) in [
            ("classifier.txt", &mut t.classifier),
            ("resolver.txt", &mut t.resolver),
            ("answer.txt", &mut t.answer),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(t)
    }

    pub fn goal(&self, kind: GoalKind) -> Goal {
        let instruction = match kind {
            GoalKind::ClassifyQuestion => &self.classifier,
            GoalKind::ResolveQuestion => &self.resolver,
            GoalKind::AnswerQuestion => &self.answer,
        };
        Goal {
            kind,
            instruction: instruction.clone(),
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Incomplete,
    Ambiguous,
    Normal,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Incomplete, Label::Ambiguous, Label::Normal];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Incomplete => "incomplete",
            Label::Ambiguous => "ambiguous",
            Label::Normal => "normal",
        }
    }

    /// Capitalized form used in the classifier's output format.
    pub fn display_name(self) -> &'static str {
        match self {
            Label::Incomplete => "Incomplete",
            Label::Ambiguous => "Ambiguous",
            Label::Normal => "Normal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OutputError {
    #[error("no {0} found in the response")]
    ParseFailure(&'static str),
    #[error("unknown classification label `{0}`")]
    UnknownLabel(String),
}

/// Case-insensitive synonym map onto the three labels.
pub fn normalize_label(raw: &str) -> Result<Label, OutputError> {
    let cleaned = raw
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    match cleaned.as_str() {
        "normal" | "complete" | "clear" | "answerable" => Ok(Label::Normal),
        "incomplete" | "missing" | "underspecified" => Ok(Label::Incomplete),
        "ambiguous" | "unclear" | "vague" => Ok(Label::Ambiguous),
        _ => Err(OutputError::UnknownLabel(raw.trim().to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StructuredOutput {
    Classification {
        label: Label,
        /// The label exactly as the model wrote it.
        raw_label: String,
        explanation: String,
    },
    Resolved {
        question: String,
        explanation: Option<String>,
    },
    Clarify {
        question: String,
        explanation: Option<String>,
    },
    Answer {
        text: String,
    },
}

impl StructuredOutput {
    pub fn explanation(&self) -> &str {
        match self {
            StructuredOutput::Classification { explanation, .. } => explanation,
            StructuredOutput::Resolved { explanation, .. }
            | StructuredOutput::Clarify { explanation, .. } => explanation.as_deref().unwrap_or(""),
            StructuredOutput::Answer { .. } => "",
        }
    }
}

pub fn render_classification(label: Label, explanation: &str) -> String {
    format!("Classification: {}\nExplanation: {explanation}", label.display_name())
}

pub fn render_resolved(question: &str) -> String {
    format!("Resolved: {question}")
}

pub fn render_answer(answer: &str) -> String {
    format!("Answer: {answer}")
}

fn regex(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

static CLASSIFICATION_RE: OnceLock<Regex> = OnceLock::new();
static EXPLANATION_RE: OnceLock<Regex> = OnceLock::new();
static TUPLE_RE: OnceLock<Regex> = OnceLock::new();
static RESOLVED_RE: OnceLock<Regex> = OnceLock::new();
static CLARIFY_RE: OnceLock<Regex> = OnceLock::new();
static ANSWER_RE: OnceLock<Regex> = OnceLock::new();

fn explanation_re() -> &'static Regex {
    regex(&EXPLANATION_RE, r"(?i)\bexplanation\s*:")
}

/// Text up to the end of the line, cut short at an `Explanation:` anchor.
fn field_value(rest: &str) -> &str {
    let line = rest.lines().next().unwrap_or("");
    let line = match explanation_re().find(line) {
        Some(m) => &line[..m.start()],
        None => line,
    };
    clean_value(line)
}

fn clean_value(s: &str) -> &str {
    s.trim()
        .trim_matches(|c: char| c == '\'' || c == '"' || c == '`' || c == '*')
        .trim()
}

fn explanation_after(text: &str, from: usize) -> Option<String> {
    let m = explanation_re().find_at(text, from)?;
    let value = clean_value(text[m.end()..].trim());
    Some(value.to_string())
}

/// Extracts the structured result for `kind` from a raw response. Leading
/// ReAct scaffolding (`Thought:`, `Action:` ...) is skipped by scanning for
/// the format anchor.
pub fn parse_structured_output(text: &str, kind: GoalKind) -> Result<StructuredOutput, OutputError> {
    match kind {
        GoalKind::ClassifyQuestion => parse_classification(text),
        GoalKind::ResolveQuestion => parse_resolution(text),
        GoalKind::AnswerQuestion => parse_answer(text),
    }
}

fn parse_classification(text: &str) -> Result<StructuredOutput, OutputError> {
    let anchor = regex(&CLASSIFICATION_RE, r"(?i)\bclassification\s*:");
    if let Some(m) = anchor.find_iter(text).last() {
        let raw = field_value(&text[m.end()..]).to_string();
        if raw.is_empty() {
            return Err(OutputError::ParseFailure("classification label"));
        }
        let label = normalize_label(&raw)?;
        let explanation = explanation_after(text, m.end()).unwrap_or_default();
        return Ok(StructuredOutput::Classification {
            label,
            raw_label: raw,
            explanation,
        });
    }
    // Tool-call form seen in agent traces: ('label', 'explanation')
    let tuple = regex(
        &TUPLE_RE,
        r#"(?s)\(\s*['"]([A-Za-z_ -]+)['"]\s*,\s*['"](.*)['"]\s*\)"#,
    );
    if let Some(c) = tuple.captures_iter(text).last() {
        let raw = c[1].trim().to_string();
        let label = normalize_label(&raw)?;
        return Ok(StructuredOutput::Classification {
            label,
            raw_label: raw,
            explanation: c[2].trim().to_string(),
        });
    }
    Err(OutputError::ParseFailure("`Classification:` anchor"))
}

fn parse_resolution(text: &str) -> Result<StructuredOutput, OutputError> {
    let resolved = regex(&RESOLVED_RE, r"(?i)\bresolved(?:\s+question)?\s*:");
    let clarify = regex(&CLARIFY_RE, r"(?i)\bclarif(?:y|ying\s+question|ication)\s*:");
    let r = resolved.find_iter(text).last();
    let c = clarify.find_iter(text).last();
    let (m, is_clarify) = match (r, c) {
        (Some(r), Some(c)) if c.start() > r.start() => (c, true),
        (Some(r), _) => (r, false),
        (None, Some(c)) => (c, true),
        (None, None) => return Err(OutputError::ParseFailure("`Resolved:` anchor")),
    };
    let question = field_value(&text[m.end()..]).to_string();
    if question.is_empty() {
        return Err(OutputError::ParseFailure("resolved question"));
    }
    let explanation = explanation_after(text, m.end())
        .or_else(|| explanation_after(&text[..m.start()], 0))
        .filter(|e| !e.is_empty());
    Ok(if is_clarify {
        StructuredOutput::Clarify {
            question,
            explanation,
        }
    } else {
        StructuredOutput::Resolved {
            question,
            explanation,
        }
    })
}

fn parse_answer(text: &str) -> Result<StructuredOutput, OutputError> {
    let anchor = regex(&ANSWER_RE, r"(?im)(?:^|\s)(?:final\s+answer|answer)\s*:");
    let m = anchor
        .find_iter(text)
        .last()
        .ok_or(OutputError::ParseFailure("`Answer:` anchor"))?;
    let answer = clean_value(text[m.end()..].trim());
    if answer.is_empty() {
        return Err(OutputError::ParseFailure("answer text"));
    }
    Ok(StructuredOutput::Answer {
        text: answer.to_string(),
    })
}

fn render_payload(payload: &Payload) -> String {
    match payload {
        Payload::Termination => "terminate".to_string(),
        Payload::Question { qid, text } => format!("question {qid}: {text}"),
        Payload::Answer { qid, texts } if texts.is_empty() => format!("answer {qid}: (no answer)"),
        Payload::Answer { qid, texts } => format!("answer {qid}: {}", texts.join(" | ")),
        Payload::Statement { texts } => format!("statement: {}", texts.join(" | ")),
    }
}

/// Deterministic prompt: instruction, notes, background, conversation,
/// current question, observations.
pub fn assemble_prompt(
    context: &Context,
    background: &[String],
    goal: &Goal,
    observations: &[String],
) -> String {
    let mut p = String::new();
    p.push_str(goal.instruction.trim_end_matches('\n'));
    p.push('\n');
    for note in &goal.notes {
        p.push('\n');
        p.push_str(note);
        p.push('\n');
    }
    if !background.is_empty() {
        p.push_str("\nContext:\n<<<\n");
        for b in background {
            p.push_str(b);
            p.push('\n');
        }
        p.push_str(">>>\n");
    }
    p.push_str("\nConversation:\n");
    if context.is_empty() {
        p.push_str("(empty)\n");
    }
    for item in context.items() {
        p.push_str(&format!("[{}] {}\n", item.sender, render_payload(&item.payload)));
    }
    if let Some((_, q)) = open_question(context) {
        p.push_str(&format!("\nQuestion: {q}\n"));
    }
    if !observations.is_empty() {
        p.push_str("\nObservations:\n");
        for (i, o) in observations.iter().enumerate() {
            p.push_str(&format!("{}. {o}\n", i + 1));
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_iterations: usize,
    pub temperature: f64,
    pub stop_on_parse: bool,
    pub max_tokens: u32,
    pub timeout_secs: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            max_iterations: 5,
            temperature: 0.0,
            stop_on_parse: true,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentStep {
    pub prompt: String,
    pub raw_response: String,
    pub parsed: Option<StructuredOutput>,
    pub note: String,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub goal: GoalKind,
    pub steps: Vec<AgentStep>,
    pub iterations: usize,
    pub total_llm_calls: u64,
}

impl AgentTrace {
    /// Summed backend latency of all steps.
    pub fn latency(&self) -> Duration {
        Duration::from_millis(self.steps.iter().map(|s| s.latency_ms).sum())
    }

    fn new(goal: GoalKind) -> Self {
        Self {
            goal,
            steps: Vec::new(),
            iterations: 0,
            total_llm_calls: 0,
        }
    }
}

/// Result of a run. `result` is `None` when the model returned an empty
/// response before achieving the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub result: Option<StructuredOutput>,
    pub trace: AgentTrace,
}

impl AgentRun {
    pub fn explanation(&self) -> &str {
        self.result.as_ref().map(|r| r.explanation()).unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("goal `{}` not achieved after {} iteration(s)", .trace.goal, .trace.iterations)]
    MaxIterationsExceeded { trace: AgentTrace },
    #[error("backend error during `{}`: {source}", .trace.goal)]
    Backend {
        source: BackendError,
        trace: AgentTrace,
    },
    #[error("invalid agent config: max_iterations must be at least 1")]
    InvalidConfig,
}

impl AgentError {
    pub fn trace(&self) -> Option<&AgentTrace> {
        match self {
            AgentError::MaxIterationsExceeded { trace } | AgentError::Backend { trace, .. } => {
                Some(trace)
            }
            AgentError::InvalidConfig => None,
        }
    }
}

/// Runs the agent loop for one goal.
pub async fn run_agent(
    backend: &dyn ChatBackend,
    context: &Context,
    background: &[String],
    goal: &Goal,
    config: &AgentConfig,
) -> Result<AgentRun, AgentError> {
    if config.max_iterations == 0 {
        return Err(AgentError::InvalidConfig);
    }
    let mut trace = AgentTrace::new(goal.kind);
    let mut observations: Vec<String> = Vec::new();
    let mut last_parsed: Option<StructuredOutput> = None;

    while trace.iterations < config.max_iterations {
        let prompt = assemble_prompt(context, background, goal, &observations);
        let mut request = ChatRequest::new(vec![ChatMessage::user(prompt.clone())]).with_tag(goal.kind.as_str());
        request.temperature = config.temperature;
        request.max_tokens = Some(config.max_tokens);
        request.timeout = Duration::from_secs(config.timeout_secs);

        trace.iterations += 1;
        trace.total_llm_calls += 1;
        let response = match backend.complete(&request).await {
            Ok(r) => r,
            Err(source) => {
                trace.steps.push(AgentStep {
                    prompt,
                    raw_response: String::new(),
                    parsed: None,
                    note: format!("backend error: {source}"),
                    latency_ms: 0,
                });
                return Err(AgentError::Backend { source, trace });
            }
        };
        let latency_ms = response.latency.as_millis() as u64;

        if response.content.trim().is_empty() {
            trace.steps.push(AgentStep {
                prompt,
                raw_response: response.content,
                parsed: None,
                note: "empty response".into(),
                latency_ms,
            });
            return Ok(AgentRun {
                result: last_parsed,
                trace,
            });
        }

        match parse_structured_output(&response.content, goal.kind) {
            Ok(parsed) => {
                trace.steps.push(AgentStep {
                    prompt,
                    raw_response: response.content,
                    parsed: Some(parsed.clone()),
                    note: "goal achieved".into(),
                    latency_ms,
                });
                if config.stop_on_parse {
                    return Ok(AgentRun {
                        result: Some(parsed),
                        trace,
                    });
                }
                last_parsed = Some(parsed);
            }
            Err(err) => {
                let observation = match &err {
                    OutputError::UnknownLabel(l) => format!(
                        "{FORMAT_NUDGE} The label `{l}` is not one of Normal, Incomplete, Ambiguous."
                    ),
                    OutputError::ParseFailure(_) => FORMAT_NUDGE.to_string(),
                };
                trace.steps.push(AgentStep {
                    prompt,
                    raw_response: response.content.clone(),
                    parsed: None,
                    note: format!("{err}; observation added"),
                    latency_ms,
                });
                observations.push(format!("Previous response: {}", response.content.trim()));
                observations.push(observation);
            }
        }
    }

    match last_parsed {
        Some(result) => Ok(AgentRun {
            result: Some(result),
            trace,
        }),
        None => Err(AgentError::MaxIterationsExceeded { trace }),
    }
}

/// A backend plus the templates and loop settings an agent needs.
#[derive(Clone)]
pub struct AgentRuntime {
    pub backend: Arc<dyn ChatBackend>,
    pub templates: Arc<PromptTemplates>,
    pub config: AgentConfig,
}

impl AgentRuntime {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            templates: Arc::new(PromptTemplates::default()),
            config: AgentConfig::default(),
        }
    }

    pub fn with_templates(mut self, templates: Arc<PromptTemplates>) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_config(mut self, config: AgentConfig) -> Self {
        self.config = config;
        self
    }

    pub async fn run(
        &self,
        context: &Context,
        background: &[String],
        goal: &Goal,
    ) -> Result<AgentRun, AgentError> {
        run_agent(self.backend.as_ref(), context, background, goal, &self.config).await
    }
}
