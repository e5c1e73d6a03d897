//! Two-party message protocol: messages, turns, interactions and the
//! per-agent interaction contexts derived from them.
//!
//! A message-string is one of four payload kinds (termination, question,
//! answer, statement). A turn pairs a message from `a` to `b` with the reply
//! from `b` to `a`; an interaction is one or more turns between the same
//! ordered pair of agents.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a participant, e.g. `h` for a human and `m` for a machine.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Result<Self, ProtocolError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(ProtocolError::EmptyAgentId);
        }
        Ok(Self(name))
    }

    /// The conventional human agent `h`.
    pub fn human() -> Self {
        Self("h".into())
    }

    /// The conventional machine agent `m`.
    pub fn machine() -> Self {
        Self("m".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The content of a message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Termination,
    Question { qid: u32, text: String },
    /// Zero or more answers to question `qid`.
    Answer { qid: u32, texts: Vec<String> },
    /// One or more statements.
    Statement { texts: Vec<String> },
}

impl Payload {
    pub fn question(qid: u32, text: impl Into<String>) -> Self {
        Payload::Question {
            qid,
            text: text.into(),
        }
    }

    pub fn answer(qid: u32, text: impl Into<String>) -> Self {
        Payload::Answer {
            qid,
            texts: vec![text.into()],
        }
    }

    pub fn statement(text: impl Into<String>) -> Self {
        Payload::Statement {
            texts: vec![text.into()],
        }
    }

    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Termination => PayloadKind::Terminate,
            Payload::Question { .. } => PayloadKind::Question,
            Payload::Answer { .. } => PayloadKind::Answer,
            Payload::Statement { .. } => PayloadKind::Statement,
        }
    }

    pub fn is_question(&self) -> bool {
        matches!(self, Payload::Question { .. })
    }

    pub fn qid(&self) -> Option<u32> {
        match self {
            Payload::Question { qid, .. } | Payload::Answer { qid, .. } => Some(*qid),
            _ => None,
        }
    }

    /// All text carried by the payload, in order.
    pub fn texts(&self) -> Vec<&str> {
        match self {
            Payload::Termination => Vec::new(),
            Payload::Question { text, .. } => vec![text.as_str()],
            Payload::Answer { texts, .. } | Payload::Statement { texts } => {
                texts.iter().map(String::as_str).collect()
            }
        }
    }

    /// Checks the per-kind cardinality rules. `position` is 1-based and only
    /// used for error reporting.
    fn check(&self, position: usize) -> Result<(), ProtocolError> {
        match self {
            Payload::Termination => Ok(()),
            Payload::Question { qid, text } => {
                if *qid == 0 {
                    return Err(ProtocolError::InvalidQid { position });
                }
                if text.trim().is_empty() {
                    return Err(ProtocolError::EmptyQuestionText { position });
                }
                Ok(())
            }
            Payload::Answer { qid, .. } => {
                if *qid == 0 {
                    return Err(ProtocolError::InvalidQid { position });
                }
                Ok(())
            }
            Payload::Statement { texts } => {
                if texts.is_empty() {
                    return Err(ProtocolError::EmptyStatement { position });
                }
                Ok(())
            }
        }
    }
}

/// Wire tag of a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Terminate,
    Question,
    Answer,
    Statement,
}

impl PayloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PayloadKind::Terminate => "terminate",
            PayloadKind::Question => "question",
            PayloadKind::Answer => "answer",
            PayloadKind::Statement => "statement",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A `(sender, payload, receiver)` triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub sender: AgentId,
    pub payload: Payload,
    pub receiver: AgentId,
}

impl Message {
    pub fn new(sender: AgentId, payload: Payload, receiver: AgentId) -> Self {
        Self {
            sender,
            payload,
            receiver,
        }
    }
}

/// A message from `a` to `b` and the reply from `b` to `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    first: Message,
    second: Message,
}

impl Turn {
    pub fn first(&self) -> &Message {
        &self.first
    }

    pub fn second(&self) -> &Message {
        &self.second
    }
}

/// Gold answers attached to a dataset interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gold {
    pub qid: u32,
    pub answers: Vec<String>,
}

/// A validated sequence of one or more turns between two agents. Serializes
/// as a [`TranscriptRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "TranscriptRecord", try_from = "TranscriptRecord")]
pub struct Interaction {
    id: String,
    agents: (AgentId, AgentId),
    turns: Vec<Turn>,
    background: Vec<String>,
    gold: Option<Gold>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("interaction has no messages")]
    EmptyInteraction,
    #[error("odd number of messages ({0}); turns are message pairs")]
    OddMessageCount(usize),
    #[error("turn {turn} starts with a termination message")]
    TurnStartsWithTermination { turn: usize },
    #[error("agent alternation violated at message {position}: {reason}")]
    AgentAlternationViolation { position: usize, reason: String },
    #[error("message {position} carries an empty question text")]
    EmptyQuestionText { position: usize },
    #[error("message {position} is a statement without text")]
    EmptyStatement { position: usize },
    #[error("message {position} uses question identifier 0; identifiers start at 1")]
    InvalidQid { position: usize },
    #[error("agent identifiers must be non-empty")]
    EmptyAgentId,
    #[error("agent `{0}` does not take part in this interaction")]
    UnknownAgent(String),
    #[error("turn index {index} out of range 1..={turns}")]
    TurnIndexOutOfRange { index: usize, turns: usize },
}

/// Groups an ordered message list into turns and checks every structural rule.
pub fn validate_interaction(messages: Vec<Message>) -> Result<Interaction, ProtocolError> {
    if messages.is_empty() {
        return Err(ProtocolError::EmptyInteraction);
    }
    if !messages.len().is_multiple_of(2) {
        return Err(ProtocolError::OddMessageCount(messages.len()));
    }
    let a = messages[0].sender.clone();
    let b = messages[0].receiver.clone();
    if a == b {
        return Err(ProtocolError::AgentAlternationViolation {
            position: 1,
            reason: format!("sender and receiver are both `{a}`"),
        });
    }

    for (idx, msg) in messages.iter().enumerate() {
        let position = idx + 1;
        let (from, to) = if idx % 2 == 0 { (&a, &b) } else { (&b, &a) };
        if &msg.sender != from || &msg.receiver != to {
            return Err(ProtocolError::AgentAlternationViolation {
                position,
                reason: format!(
                    "expected `{from}` -> `{to}`, found `{}` -> `{}`",
                    msg.sender, msg.receiver
                ),
            });
        }
        if idx % 2 == 0 && msg.payload == Payload::Termination {
            return Err(ProtocolError::TurnStartsWithTermination { turn: idx / 2 + 1 });
        }
        msg.payload.check(position)?;
    }

    let mut turns = Vec::with_capacity(messages.len() / 2);
    let mut iter = messages.into_iter();
    while let (Some(first), Some(second)) = (iter.next(), iter.next()) {
        turns.push(Turn { first, second });
    }

    Ok(Interaction {
        id: String::new(),
        agents: (a, b),
        turns,
        background: Vec::new(),
        gold: None,
    })
}

impl Interaction {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_background(mut self, background: Vec<String>) -> Self {
        self.background = background;
        self
    }

    pub fn with_gold(mut self, gold: Option<Gold>) -> Self {
        self.gold = gold;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The initiating agent `a`.
    pub fn initiator(&self) -> &AgentId {
        &self.agents.0
    }

    /// The responding agent `b`.
    pub fn responder(&self) -> &AgentId {
        &self.agents.1
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    /// Number of turns `k`.
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn background(&self) -> &[String] {
        &self.background
    }

    pub fn gold(&self) -> Option<&Gold> {
        self.gold.as_ref()
    }

    /// Flattened message sequence `M1..M2k`.
    pub fn messages(&self) -> impl Iterator<Item = &Message> + '_ {
        self.turns.iter().flat_map(|t| [&t.first, &t.second])
    }

    /// Messages from `a`, i.e. the odd positions.
    pub fn initiator_messages(&self) -> impl Iterator<Item = &Message> + '_ {
        self.turns.iter().map(|t| &t.first)
    }

    /// The context visible to `agent` on turn `i` (1-based): `m1..m(2i-2)`
    /// for the initiator, `m1..m(2i-1)` for the responder. Background
    /// statements come first, attributed to the initiator.
    pub fn context_for(&self, agent: &AgentId, i: usize) -> Result<Context, ProtocolError> {
        if i == 0 || i > self.turns.len() {
            return Err(ProtocolError::TurnIndexOutOfRange {
                index: i,
                turns: self.turns.len(),
            });
        }
        let visible = if agent == self.initiator() {
            2 * i - 2
        } else if agent == self.responder() {
            2 * i - 1
        } else {
            return Err(ProtocolError::UnknownAgent(agent.to_string()));
        };

        let mut items: Vec<ContextItem> = self
            .background
            .iter()
            .map(|s| ContextItem::new(self.initiator().clone(), Payload::statement(s.clone())))
            .collect();
        items.extend(
            self.messages()
                .take(visible)
                .map(|m| ContextItem::new(m.sender.clone(), m.payload.clone())),
        );
        Ok(Context { items })
    }

    /// The full context for the whole interaction, background included.
    pub fn full_context(&self) -> Context {
        let mut ctx = Context::from_background(self.initiator(), &self.background);
        for m in self.messages() {
            ctx.push(m.sender.clone(), m.payload.clone());
        }
        ctx
    }
}

/// A message-string together with its sender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextItem {
    pub sender: AgentId,
    #[serde(flatten)]
    pub payload: Payload,
}

impl ContextItem {
    pub fn new(sender: AgentId, payload: Payload) -> Self {
        Self { sender, payload }
    }
}

/// An ordered sequence of message-strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Context {
    items: Vec<ContextItem>,
}

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_items(items: Vec<ContextItem>) -> Self {
        Self { items }
    }

    /// Background statements attributed to `sender`, one item per string.
    pub fn from_background(sender: &AgentId, background: &[String]) -> Self {
        Self {
            items: background
                .iter()
                .map(|s| ContextItem::new(sender.clone(), Payload::statement(s.clone())))
                .collect(),
        }
    }

    pub fn items(&self) -> &[ContextItem] {
        &self.items
    }

    pub fn into_items(self) -> Vec<ContextItem> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn last(&self) -> Option<&ContextItem> {
        self.items.last()
    }

    pub fn push(&mut self, sender: AgentId, payload: Payload) {
        self.items.push(ContextItem::new(sender, payload));
    }

    /// `(qid, text)` when the final item is a question.
    pub fn terminal_question(&self) -> Option<(u32, &str)> {
        match self.items.last().map(|i| &i.payload) {
            Some(Payload::Question { qid, text }) => Some((*qid, text.as_str())),
            _ => None,
        }
    }

    /// Largest question/answer identifier used so far, or 0.
    pub fn max_qid(&self) -> u32 {
        self.items
            .iter()
            .filter_map(|i| i.payload.qid())
            .max()
            .unwrap_or(0)
    }

    pub fn is_prefix_of(&self, other: &Context) -> bool {
        self.items.len() <= other.items.len() && other.items[..self.items.len()] == self.items[..]
    }
}

/// The most recent question in `context`, or `None` when there is none.
pub fn extract_question(context: &Context) -> Option<(u32, &str)> {
    context.items.iter().rev().find_map(|i| match &i.payload {
        Payload::Question { qid, text } => Some((*qid, text.as_str())),
        _ => None,
    })
}

/// The most recent question not answered later in `context`, falling back
/// to [`extract_question`] when every question has an answer. After a
/// clarifying exchange this is the original question again.
pub fn open_question(context: &Context) -> Option<(u32, &str)> {
    let items = &context.items;
    items
        .iter()
        .enumerate()
        .rev()
        .find_map(|(idx, i)| match &i.payload {
            Payload::Question { qid, text }
                if !items[idx + 1..]
                    .iter()
                    .any(|later| matches!(later.payload, Payload::Answer { qid: q, .. } if q == *qid)) =>
            {
                Some((*qid, text.as_str()))
            }
            _ => None,
        })
        .or_else(|| extract_question(context))
}

/// Texts of the most recent answer to `qid`. An answer with no texts is
/// `Some(&[])`, distinct from no answer at all.
pub fn extract_answer(context: &Context, qid: u32) -> Option<&[String]> {
    context.items.iter().rev().find_map(|i| match &i.payload {
        Payload::Answer { qid: q, texts } if *q == qid => Some(texts.as_slice()),
        _ => None,
    })
}

// ---------------------------------------------------------------------------
// Transcript wire format: one JSON record per line.

/// One message on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub from: String,
    pub kind: PayloadKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qid: Option<u32>,
    #[serde(default)]
    pub texts: Vec<String>,
}

/// One interaction on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub id: String,
    pub agents: [String; 2],
    #[serde(default)]
    pub background: Vec<String>,
    pub messages: Vec<WireMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transcript line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl ParseError {
    fn new(line: usize, reason: impl Into<String>) -> Self {
        Self {
            line,
            reason: reason.into(),
        }
    }
}

impl From<&Interaction> for TranscriptRecord {
    fn from(interaction: &Interaction) -> Self {
        TranscriptRecord {
            id: interaction.id.clone(),
            agents: [
                interaction.agents.0.to_string(),
                interaction.agents.1.to_string(),
            ],
            background: interaction.background.clone(),
            messages: interaction
                .messages()
                .map(|m| {
                    let (qid, texts) = match &m.payload {
                        Payload::Termination => (None, Vec::new()),
                        Payload::Question { qid, text } => (Some(*qid), vec![text.clone()]),
                        Payload::Answer { qid, texts } => (Some(*qid), texts.clone()),
                        Payload::Statement { texts } => (None, texts.clone()),
                    };
                    WireMessage {
                        from: m.sender.to_string(),
                        kind: m.payload.kind(),
                        qid,
                        texts,
                    }
                })
                .collect(),
            gold: interaction.gold.clone(),
        }
    }
}

impl From<Interaction> for TranscriptRecord {
    fn from(interaction: Interaction) -> Self {
        TranscriptRecord::from(&interaction)
    }
}

impl TryFrom<TranscriptRecord> for Interaction {
    type Error = ParseError;

    fn try_from(record: TranscriptRecord) -> Result<Self, Self::Error> {
        record.to_interaction(1)
    }
}

impl TranscriptRecord {
    /// Converts the wire record to a validated interaction. Errors are
    /// reported against `line`.
    pub fn to_interaction(&self, line: usize) -> Result<Interaction, ParseError> {
        let a = AgentId::new(self.agents[0].clone()).map_err(|e| ParseError::new(line, e.to_string()))?;
        let b = AgentId::new(self.agents[1].clone()).map_err(|e| ParseError::new(line, e.to_string()))?;
        if a == b {
            return Err(ParseError::new(line, "the two agents must differ"));
        }
        let mut messages = Vec::with_capacity(self.messages.len());
        for (idx, wm) in self.messages.iter().enumerate() {
            let (sender, receiver) = if wm.from == a.as_str() {
                (a.clone(), b.clone())
            } else if wm.from == b.as_str() {
                (b.clone(), a.clone())
            } else {
                return Err(ParseError::new(
                    line,
                    format!("message {} is from unknown agent `{}`", idx + 1, wm.from),
                ));
            };
            let payload = wire_payload(wm)
                .map_err(|reason| ParseError::new(line, format!("message {}: {reason}", idx + 1)))?;
            messages.push(Message::new(sender, payload, receiver));
        }
        let interaction =
            validate_interaction(messages).map_err(|e| ParseError::new(line, e.to_string()))?;
        if interaction.initiator() != &a {
            return Err(ParseError::new(
                line,
                "the first message must come from the first listed agent",
            ));
        }
        Ok(interaction
            .with_id(self.id.clone())
            .with_background(self.background.clone())
            .with_gold(self.gold.clone()))
    }
}

fn wire_payload(wm: &WireMessage) -> Result<Payload, String> {
    match wm.kind {
        PayloadKind::Terminate => {
            if wm.qid.is_some() || !wm.texts.is_empty() {
                return Err("terminate carries no qid or texts".into());
            }
            Ok(Payload::Termination)
        }
        PayloadKind::Question => {
            let qid = wm.qid.ok_or("question without qid")?;
            if wm.texts.len() != 1 {
                return Err(format!(
                    "a question carries exactly one text, found {}",
                    wm.texts.len()
                ));
            }
            Ok(Payload::Question {
                qid,
                text: wm.texts[0].clone(),
            })
        }
        PayloadKind::Answer => Ok(Payload::Answer {
            qid: wm.qid.ok_or("answer without qid")?,
            texts: wm.texts.clone(),
        }),
        PayloadKind::Statement => {
            if wm.qid.is_some() {
                return Err("statement carries no qid".into());
            }
            Ok(Payload::Statement {
                texts: wm.texts.clone(),
            })
        }
    }
}

/// Renders one interaction as a single transcript line (no trailing newline).
pub fn render_transcript(interaction: &Interaction) -> String {
    serde_json::to_string(&TranscriptRecord::from(interaction))
        .expect("transcript records always serialize")
}

/// Renders a raw wire record, rejecting records without turns.
pub fn render_record(record: &TranscriptRecord) -> Result<String, ProtocolError> {
    if record.messages.is_empty() {
        return Err(ProtocolError::EmptyInteraction);
    }
    Ok(serde_json::to_string(record).expect("transcript records always serialize"))
}

/// Parses a single transcript record.
pub fn parse_transcript(text: &str) -> Result<Interaction, ParseError> {
    parse_line(text.trim_end_matches(['\r', '\n']), 1)
}

fn parse_line(line: &str, number: usize) -> Result<Interaction, ParseError> {
    let record: TranscriptRecord =
        serde_json::from_str(line).map_err(|e| ParseError::new(number, e.to_string()))?;
    record.to_interaction(number)
}

/// Renders many interactions as newline-delimited records.
pub fn render_transcripts<'a>(interactions: impl IntoIterator<Item = &'a Interaction>) -> String {
    let mut out = String::new();
    for i in interactions {
        out.push_str(&render_transcript(i));
        out.push('\n');
    }
    out
}

/// Parses newline-delimited records; blank lines are skipped.
pub fn parse_transcripts(text: &str) -> Result<Vec<Interaction>, ParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, l)| parse_line(l, idx + 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h() -> AgentId {
        AgentId::human()
    }

    fn m() -> AgentId {
        AgentId::machine()
    }

    fn hm(p: Payload) -> Message {
        Message::new(h(), p, m())
    }

    fn mh(p: Payload) -> Message {
        Message::new(m(), p, h())
    }

    fn example_one() -> Vec<Message> {
        vec![
            hm(Payload::statement("Child x has a height is 4 ft.")),
            mh(Payload::statement("ok")),
            hm(Payload::statement(
                "The height of child y is the square root of the height of child x",
            )),
            mh(Payload::statement("ok")),
            hm(Payload::question(1, "What is the height of y")),
            mh(Payload::answer(1, "y is +2 or -2")),
        ]
    }

    #[test]
    fn example_one_has_three_turns() {
        let i = validate_interaction(example_one()).unwrap();
        assert_eq!(i.len(), 3);
        assert_eq!(i.messages().count(), 6);
    }

    #[test]
    fn termination_cannot_open_a_turn() {
        let msgs = vec![hm(Payload::Termination), mh(Payload::statement("ok"))];
        assert_eq!(
            validate_interaction(msgs),
            Err(ProtocolError::TurnStartsWithTermination { turn: 1 })
        );
    }

    #[test]
    fn termination_may_close_a_turn() {
        let msgs = vec![hm(Payload::question(1, "q?")), mh(Payload::Termination)];
        assert!(validate_interaction(msgs).is_ok());
    }

    #[test]
    fn odd_count_rejected() {
        let mut msgs = example_one();
        msgs.pop();
        assert_eq!(
            validate_interaction(msgs),
            Err(ProtocolError::OddMessageCount(5))
        );
    }

    #[test]
    fn alternation_enforced() {
        let mut msgs = example_one();
        msgs[3] = hm(Payload::statement("ok"));
        assert!(matches!(
            validate_interaction(msgs),
            Err(ProtocolError::AgentAlternationViolation { position: 4, .. })
        ));
    }

    #[test]
    fn empty_question_rejected() {
        let msgs = vec![hm(Payload::question(1, "  ")), mh(Payload::answer(1, "x"))];
        assert_eq!(
            validate_interaction(msgs),
            Err(ProtocolError::EmptyQuestionText { position: 1 })
        );
    }

    #[test]
    fn empty_statement_rejected_but_empty_answer_allowed() {
        let msgs = vec![
            hm(Payload::Statement { texts: vec![] }),
            mh(Payload::statement("ok")),
        ];
        assert_eq!(
            validate_interaction(msgs),
            Err(ProtocolError::EmptyStatement { position: 1 })
        );
        let msgs = vec![
            hm(Payload::question(1, "q")),
            mh(Payload::Answer {
                qid: 1,
                texts: vec![],
            }),
        ];
        assert!(validate_interaction(msgs).is_ok());
    }

    #[test]
    fn context_sizes_follow_turn_index() {
        let i = validate_interaction(example_one()).unwrap();
        assert_eq!(i.context_for(&h(), 3).unwrap().len(), 4);
        assert_eq!(i.context_for(&m(), 3).unwrap().len(), 5);
        assert!(i.context_for(&h(), 1).unwrap().is_empty());
        let with_bg = i.clone().with_background(vec!["passage".into()]);
        assert_eq!(with_bg.context_for(&h(), 1).unwrap().len(), 1);
        assert_eq!(
            i.context_for(&AgentId::new("z").unwrap(), 1),
            Err(ProtocolError::UnknownAgent("z".into()))
        );
        assert!(matches!(
            i.context_for(&h(), 4),
            Err(ProtocolError::TurnIndexOutOfRange { index: 4, turns: 3 })
        ));
    }

    #[test]
    fn question_extraction() {
        let i = validate_interaction(example_one()).unwrap();
        let ctx = i.context_for(&m(), 3).unwrap();
        assert_eq!(extract_question(&ctx), Some((1, "What is the height of y")));

        let statements = i.context_for(&m(), 2).unwrap();
        assert_eq!(extract_question(&statements), None);

        let mut two = Context::new();
        two.push(h(), Payload::question(1, "first?"));
        two.push(m(), Payload::answer(1, "a"));
        two.push(h(), Payload::question(2, "second?"));
        assert_eq!(extract_question(&two), Some((2, "second?")));
    }

    #[test]
    fn answer_extraction_prefers_latest() {
        let mut msgs = example_one();
        msgs.push(hm(Payload::statement(
            "Your answer is not completely correct since height has to be positive",
        )));
        msgs.push(mh(Payload::answer(1, "y is +2")));
        let i = validate_interaction(msgs).unwrap();
        let ctx = i.full_context();
        assert_eq!(
            extract_answer(&ctx, 1),
            Some(&["y is +2".to_string()][..])
        );
        assert_eq!(extract_answer(&ctx, 7), None);

        let mut empty = Context::new();
        empty.push(m(), Payload::Answer { qid: 3, texts: vec![] });
        assert_eq!(extract_answer(&empty, 3), Some(&[][..]));
    }

    #[test]
    fn transcript_round_trip_example_one() {
        let i = validate_interaction(example_one())
            .unwrap()
            .with_id("ex1")
            .with_gold(Some(Gold {
                qid: 1,
                answers: vec!["2".into()],
            }));
        let text = render_transcript(&i);
        assert!(!text.contains('\n'));
        assert_eq!(parse_transcript(&text).unwrap(), i);
    }

    #[test]
    fn render_rejects_empty_record() {
        let rec = TranscriptRecord {
            id: "e".into(),
            agents: ["h".into(), "m".into()],
            background: vec![],
            messages: vec![],
            gold: None,
        };
        assert_eq!(render_record(&rec), Err(ProtocolError::EmptyInteraction));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let good = render_transcript(&validate_interaction(example_one()).unwrap());
        let text = format!("{good}\n\n{{\"id\":\"x\"}}\n");
        let err = parse_transcripts(&text).unwrap_err();
        assert_eq!(err.line, 3);

        let bad_agent = good.replace("\"from\":\"m\"", "\"from\":\"q\"");
        let err = parse_transcript(&bad_agent).unwrap_err();
        assert!(err.reason.contains("unknown agent"), "{}", err.reason);
    }

    #[test]
    fn wire_kind_names() {
        let text = render_transcript(&validate_interaction(example_one()).unwrap());
        assert!(text.contains(r#""kind":"statement""#));
        assert!(text.contains(r#""kind":"question","qid":1"#));
    }

    #[test]
    fn open_question_skips_answered_clarification() {
        let (h, m) = (AgentId::human(), AgentId::machine());
        let mut c = Context::new();
        c.push(h.clone(), Payload::question(1, "Who scored the film?"));
        c.push(m.clone(), Payload::question(2, "Which film?"));
        c.push(h.clone(), Payload::answer(2, "The 2010 one"));
        assert_eq!(extract_question(&c), Some((2, "Which film?")));
        assert_eq!(open_question(&c), Some((1, "Who scored the film?")));
        c.push(m, Payload::answer(1, "John Powell"));
        assert_eq!(open_question(&c), Some((2, "Which film?")));
    }

}
