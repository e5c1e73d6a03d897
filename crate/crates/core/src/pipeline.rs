//! Multi-turn question answering with and without the transducer.
//!
//! Without the transducer every human message goes straight to the answer
//! agent. With it, the context first goes through `transduce`: passthrough
//! and resolved contexts are answered, a clarify outcome sends the
//! clarifying question back to the human instead.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentRuntime, AgentTrace, GoalKind, Label, StructuredOutput};
use crate::llm_backend::CallStats;
use crate::protocol::{
    open_question, render_transcript, validate_interaction, AgentId, Context, Gold,
    Interaction, Message, Payload,
};
use crate::transducer::{transduce, Outcome, TransductionRecord};

/// Reply used for turns 2..K when the seed interaction has no further
/// human messages to replay.
pub const DEFAULT_CLARIFICATION_STUB: &str = "Please answer using the context already provided.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WithoutTransducer,
    WithTransducer,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::WithoutTransducer => "without",
            Mode::WithTransducer => "with",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "with" | "with_transducer" => Ok(Mode::WithTransducer),
            "without" | "without_transducer" => Ok(Mode::WithoutTransducer),
            other => Err(format!("unknown mode `{other}` (expected with|without)")),
        }
    }
}

/// A scripted human line: free text interpreted in context, or an exact
/// payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HumanInput {
    Text(String),
    Payload(Payload),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum HumanSource {
    /// Messages arrive through [`answer_turn`] from a live client.
    Live,
    /// Replays the initiator's messages from a recorded interaction; when a
    /// single-turn seed runs out, `stub` is sent instead.
    Replay { interaction: Interaction, stub: String },
    Scripted { lines: Vec<HumanInput> },
}

impl HumanSource {
    pub fn replay(interaction: Interaction) -> Self {
        HumanSource::Replay {
            interaction,
            stub: DEFAULT_CLARIFICATION_STUB.to_string(),
        }
    }

    pub fn scripted<S: Into<String>>(lines: impl IntoIterator<Item = S>) -> Self {
        HumanSource::Scripted {
            lines: lines.into_iter().map(|l| HumanInput::Text(l.into())).collect(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            HumanSource::Live => "live",
            HumanSource::Replay { .. } => "replay",
            HumanSource::Scripted { .. } => "scripted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub k: usize,
    pub human_message: Payload,
    pub transduction: Option<TransductionRecord>,
    pub answer: Option<String>,
    pub clarify_emitted: Option<String>,
    pub llm_calls_this_turn: u64,
    pub calls_by_role: BTreeMap<String, u64>,
    pub answer_trace: Option<AgentTrace>,
    /// Agent failure handled by a fallback during this turn.
    pub error: Option<String>,
}

impl TurnRecord {
    /// The text graded against gold answers: the answer, or empty for a
    /// clarify turn.
    pub fn candidate(&self) -> &str {
        self.answer.as_deref().unwrap_or("")
    }

    pub fn label(&self) -> Option<Label> {
        self.transduction.as_ref().map(|t| t.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub mode: Mode,
    /// Working context seen by the agents: the human's messages (with
    /// resolved questions substituted) and the machine's replies.
    pub context: Context,
    pub background: Vec<String>,
    /// Raw human/machine exchange.
    pub transcript: Vec<Message>,
    pub turn: usize,
    pub records: Vec<TurnRecord>,
    pub human_source: HumanSource,
    pub source_cursor: usize,
    pub terminated: bool,
    pub ended_early: Option<String>,
    pub stats: CallStats,
    pub gold: Option<Gold>,
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, mode: Mode, human_source: HumanSource) -> Self {
        let (background, gold) = match &human_source {
            HumanSource::Replay { interaction, .. } => {
                (interaction.background().to_vec(), interaction.gold().cloned())
            }
            _ => (Vec::new(), None),
        };
        Self {
            session_id: session_id.into(),
            mode,
            context: Context::new(),
            background,
            transcript: Vec::new(),
            turn: 0,
            records: Vec::new(),
            human_source,
            source_cursor: 0,
            terminated: false,
            ended_early: None,
            stats: CallStats::default(),
            gold: None,
        }
        .with_gold(gold)
    }

    pub fn with_background(mut self, background: Vec<String>) -> Self {
        self.background = background;
        self
    }

    pub fn with_gold(mut self, gold: Option<Gold>) -> Self {
        self.gold = gold;
        self
    }

    /// Identifier of the machine's outstanding clarifying question, if the
    /// last machine message was one.
    pub fn pending_clarification(&self) -> Option<u32> {
        match self.transcript.last() {
            Some(m) if m.sender == AgentId::machine() => match &m.payload {
                Payload::Question { qid, .. } => Some(*qid),
                _ => None,
            },
            _ => None,
        }
    }

    fn next_qid(&self) -> u32 {
        let transcript_max = self
            .transcript
            .iter()
            .filter_map(|m| m.payload.qid())
            .max()
            .unwrap_or(0);
        transcript_max.max(self.context.max_qid()) + 1
    }

    /// The exchange so far as a validated interaction; `None` before the
    /// first turn.
    pub fn transcript_interaction(&self) -> Option<Interaction> {
        validate_interaction(self.transcript.clone())
            .ok()
            .map(|i| {
                i.with_id(self.session_id.clone())
                    .with_background(self.background.clone())
                    .with_gold(self.gold.clone())
            })
    }

    pub fn terminate(&mut self) {
        self.terminated = true;
    }
}

/// Turns free text from a human into a payload: a reply to an outstanding
/// clarifying question is an answer; the first message, or anything ending
/// in `?`, is a new question; everything else is a statement.
pub fn interpret_human_text(text: &str, state: &SessionState) -> Payload {
    let text = text.trim();
    if let Some(beta) = state.pending_clarification() {
        return Payload::answer(beta, text);
    }
    let has_question = state.transcript.iter().any(|m| m.payload.is_question());
    if !has_question || text.ends_with('?') {
        Payload::question(state.next_qid(), text)
    } else {
        Payload::statement(text)
    }
}

/// Next human message for the session, or `None` when the source is
/// exhausted. Live sources always return `None`: their messages are fed to
/// [`answer_turn`] directly.
pub fn next_human_message(source: &HumanSource, state: &SessionState) -> Option<Payload> {
    match source {
        HumanSource::Live => None,
        HumanSource::Scripted { lines } => lines.get(state.source_cursor).map(|l| match l {
            HumanInput::Text(t) => interpret_human_text(t, state),
            HumanInput::Payload(p) => p.clone(),
        }),
        HumanSource::Replay { interaction, stub } => {
            if let Some(m) = interaction.initiator_messages().nth(state.source_cursor) {
                return Some(m.payload.clone());
            }
            if interaction.len() == 1 {
                return Some(match state.pending_clarification() {
                    Some(beta) => Payload::answer(beta, stub.clone()),
                    None => Payload::statement(stub.clone()),
                });
            }
            None
        }
    }
}

/// Agent runtimes for the two roles; they may use different backends.
#[derive(Clone)]
pub struct Runtimes {
    pub transducer: AgentRuntime,
    pub responder: AgentRuntime,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("session `{0}` is terminated")]
    SessionTerminated(String),
    #[error("a termination message ends the session; it cannot be answered")]
    TerminationIsNotATurn,
}

fn calls_by_role(traces: &[&AgentTrace]) -> BTreeMap<String, u64> {
    let mut map = BTreeMap::new();
    for t in traces {
        *map.entry(t.goal.as_str().to_string()).or_insert(0) += t.total_llm_calls;
    }
    map
}

/// Processes one human message and appends the machine's reply.
pub async fn answer_turn(
    state: &mut SessionState,
    human_message: Payload,
    runtimes: &Runtimes,
) -> Result<TurnRecord, PipelineError> {
    if state.terminated {
        return Err(PipelineError::SessionTerminated(state.session_id.clone()));
    }
    if human_message == Payload::Termination {
        return Err(PipelineError::TerminationIsNotATurn);
    }
    let (h, m) = (AgentId::human(), AgentId::machine());
    let k = state.turn + 1;

    let mut context = state.context.clone();
    context.push(h.clone(), human_message.clone());
    let mut error: Option<String> = None;

    let transduction = match state.mode {
        Mode::WithoutTransducer => None,
        Mode::WithTransducer => {
            match transduce(&context, &state.background, &runtimes.transducer).await {
                Ok(rec) => Some(rec),
                Err(e) => {
                    // Fail open: answer the original context.
                    error = Some(e.to_string());
                    let traces: Vec<AgentTrace> = e.trace().cloned().into_iter().collect();
                    Some(TransductionRecord {
                        input_context: context.clone(),
                        label: Label::Normal,
                        raw_label: None,
                        explanation: String::new(),
                        outcome: Outcome::Passthrough,
                        output_context: context.clone(),
                        llm_calls: traces.iter().map(|t| t.total_llm_calls).sum(),
                        traces,
                    })
                }
            }
        }
    };

    let mut answer = None;
    let mut clarify_emitted = None;
    let mut answer_trace = None;
    let reply = match transduction.as_ref().map(|t| &t.outcome) {
        Some(Outcome::Clarify { question }) => {
            clarify_emitted = Some(question.clone());
            let beta = state.next_qid().max(context.max_qid() + 1);
            Payload::question(beta, question.clone())
        }
        outcome => {
            if matches!(outcome, Some(Outcome::Resolved { .. })) {
                context = transduction.as_ref().unwrap().output_context.clone();
            }
            let goal = runtimes.responder.templates.goal(GoalKind::AnswerQuestion);
            let text = match runtimes.responder.run(&context, &state.background, &goal).await {
                Ok(run) => {
                    let text = match &run.result {
                        Some(StructuredOutput::Answer { text }) => text.clone(),
                        _ => {
                            error.get_or_insert_with(|| "answer agent returned no answer".into());
                            String::new()
                        }
                    };
                    answer_trace = Some(run.trace);
                    text
                }
                Err(e) => {
                    error = Some(e.to_string());
                    answer_trace = e.trace().cloned();
                    String::new()
                }
            };
            answer = Some(text.clone());
            let texts = if text.is_empty() { vec![] } else { vec![text.clone()] };
            match open_question(&context) {
                Some((qid, _)) => Payload::Answer { qid, texts },
                None if text.is_empty() => Payload::statement("(no answer)"),
                None => Payload::statement(text),
            }
        }
    };

    context.push(m.clone(), reply.clone());
    state.context = context;
    state
        .transcript
        .push(Message::new(h.clone(), human_message.clone(), m.clone()));
    state.transcript.push(Message::new(m, reply, h));

    let mut traces: Vec<&AgentTrace> = transduction.iter().flat_map(|t| t.traces.iter()).collect();
    traces.extend(answer_trace.iter());
    let by_role = calls_by_role(&traces);
    let calls: u64 = by_role.values().sum();

    state.stats.calls += calls;
    state.stats.total_latency += traces.iter().map(|t| t.latency()).sum::<std::time::Duration>();
    for (role, n) in &by_role {
        *state.stats.per_role.entry(role.clone()).or_default() += n;
    }

    let record = TurnRecord {
        k,
        human_message,
        transduction,
        answer,
        clarify_emitted,
        llm_calls_this_turn: calls,
        calls_by_role: by_role,
        answer_trace,
        error,
    };
    state.turn = k;
    state.records.push(record.clone());
    Ok(record)
}

/// Receives each completed turn; used to persist sessions as they run.
pub trait TurnSink: Send {
    fn turn_completed(&mut self, state: &SessionState, record: &TurnRecord) -> std::io::Result<()>;
}

/// Drives up to `max_turns` turns, pulling human messages from the state's
/// source. Stops early on termination or source exhaustion.
pub async fn run_session(
    mut state: SessionState,
    max_turns: usize,
    runtimes: &Runtimes,
    mut sink: Option<&mut dyn TurnSink>,
) -> SessionState {
    for k in 1..=max_turns {
        if state.terminated {
            break;
        }
        let Some(message) = next_human_message(&state.human_source, &state) else {
            state.ended_early = Some(format!(
                "human source exhausted after {} of {max_turns} turns",
                k - 1
            ));
            break;
        };
        state.source_cursor += 1;
        if message == Payload::Termination {
            state.terminate();
            if k <= max_turns {
                state.ended_early = Some(format!("terminated by human before turn {k}"));
            }
            break;
        }
        let record = match answer_turn(&mut state, message, runtimes).await {
            Ok(r) => r,
            Err(e) => {
                state.ended_early = Some(e.to_string());
                break;
            }
        };
        if let Some(sink) = sink.as_deref_mut() {
            if let Err(e) = sink.turn_completed(&state, &record) {
                tracing::warn!(session = %state.session_id, error = %e, "failed to persist turn");
            }
        }
    }
    state
}

// ---------------------------------------------------------------------------
// Run directories

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub mode: Mode,
    pub turns: usize,
    pub transducer_backend: String,
    pub responder_backend: String,
    /// How turns 2..K were produced: replayed dataset turns and/or the stub.
    pub human_simulation: String,
    pub stub: String,
}

impl RunManifest {
    /// Column label in reports, e.g. `with:gpt` or `without`.
    pub fn label(&self) -> String {
        match self.mode {
            Mode::WithTransducer => format!("with:{}", self.transducer_backend),
            Mode::WithoutTransducer => "without".to_string(),
        }
    }
}

/// One line of `turns.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnLine {
    pub session_id: String,
    pub dataset: String,
    pub record: TurnRecord,
}

/// One line of `sessions.jsonl`, written when a session finishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub dataset: String,
    pub interaction_id: String,
    pub gold_answers: Vec<String>,
    pub turns_completed: usize,
    pub ended_early: Option<String>,
    pub stats: CallStats,
}

/// Layout:
///
/// ```text
/// <run>/manifest.json
/// <run>/sessions.jsonl          one SessionSummary per finished session
/// <run>/turns.jsonl             one TurnLine per completed turn (append-only)
/// <run>/transcripts/<id>.jsonl  transcript record, rewritten after each turn
/// <run>/grades.jsonl            grades (see evaluation)
/// ```
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SESSIONS_FILE: &str = "sessions.jsonl";
pub const TURNS_FILE: &str = "turns.jsonl";
pub const TRANSCRIPTS_DIR: &str = "transcripts";

fn append_line(path: &Path, line: &str) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(format!("{line}\n").as_bytes())?;
    f.sync_data()
}

/// Writes via a temporary file and rename.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(tmp, path)
}

pub fn sanitize_file_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>, manifest: &RunManifest) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(TRANSCRIPTS_DIR))?;
        for f in [SESSIONS_FILE, TURNS_FILE] {
            let p = root.join(f);
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        write_atomic(
            &root.join(MANIFEST_FILE),
            &serde_json::to_string_pretty(manifest).map_err(std::io::Error::other)?,
        )?;
        Ok(Self { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sink<'a>(&'a self, dataset: &'a str) -> RunDirSink<'a> {
        RunDirSink { dir: self, dataset }
    }

    pub fn record_turn(&self, dataset: &str, state: &SessionState, record: &TurnRecord) -> std::io::Result<()> {
        let line = TurnLine {
            session_id: state.session_id.clone(),
            dataset: dataset.to_string(),
            record: record.clone(),
        };
        append_line(
            &self.root.join(TURNS_FILE),
            &serde_json::to_string(&line).map_err(std::io::Error::other)?,
        )?;
        if let Some(interaction) = state.transcript_interaction() {
            let path = self
                .root
                .join(TRANSCRIPTS_DIR)
                .join(format!("{}.jsonl", sanitize_file_name(&state.session_id)));
            write_atomic(&path, &format!("{}\n", render_transcript(&interaction)))?;
        }
        Ok(())
    }

    pub fn record_session(&self, summary: &SessionSummary) -> std::io::Result<()> {
        append_line(
            &self.root.join(SESSIONS_FILE),
            &serde_json::to_string(summary).map_err(std::io::Error::other)?,
        )
    }
}

pub struct RunDirSink<'a> {
    dir: &'a RunDir,
    dataset: &'a str,
}

impl TurnSink for RunDirSink<'_> {
    fn turn_completed(&mut self, state: &SessionState, record: &TurnRecord) -> std::io::Result<()> {
        self.dir.record_turn(self.dataset, state, record)
    }
}

impl SessionSummary {
    pub fn from_state(state: &SessionState, dataset: &str, interaction_id: &str) -> Self {
        Self {
            session_id: state.session_id.clone(),
            dataset: dataset.to_string(),
            interaction_id: interaction_id.to_string(),
            gold_answers: state.gold.as_ref().map(|g| g.answers.clone()).unwrap_or_default(),
            turns_completed: state.records.len(),
            ended_early: state.ended_early.clone(),
            stats: state.stats.clone(),
        }
    }
}

/// Session id used for the `index`-th interaction of a dataset.
pub fn session_id(dataset: &str, index: usize) -> String {
    format!("{dataset}-{index:05}")
}

/// Runs one replay session per interaction, up to `concurrency` at a time,
/// persisting every turn and session summary under `dir`. Results keep the
/// input order.
pub async fn run_dataset(
    dir: &RunDir,
    dataset: &str,
    interactions: &[Interaction],
    manifest: &RunManifest,
    runtimes: &Runtimes,
    concurrency: usize,
) -> std::io::Result<Vec<SessionState>> {
    use futures::stream::{self, StreamExt};

    let results: Vec<std::io::Result<SessionState>> = stream::iter(interactions.iter().enumerate())
        .map(|(index, interaction)| async move {
            let source = HumanSource::Replay {
                interaction: interaction.clone(),
                stub: manifest.stub.clone(),
            };
            let state = SessionState::new(session_id(dataset, index), manifest.mode, source);
            let mut sink = dir.sink(dataset);
            let done = run_session(state, manifest.turns, runtimes, Some(&mut sink)).await;
            dir.record_session(&SessionSummary::from_state(&done, dataset, interaction.id()))?;
            Ok(done)
        })
        .buffered(concurrency.max(1))
        .collect()
        .await;
    results.into_iter().collect()
}
