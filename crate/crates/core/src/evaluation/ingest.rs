//! Adapters from published dataset layouts to interactions.
//!
//! Single-question datasets become one turn: the human asks `?1`, the
//! machine replies with the first gold answer. Dialogue datasets keep their
//! turns, with a machine utterance ending in `?` read as a counter-question
//! and the human's next utterance as its answer.

use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use super::EvaluationError;
use crate::protocol::{
    parse_transcripts, validate_interaction, AgentId, Gold, Interaction, Message, Payload,
};

pub const DEFAULT_SAMPLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adapter {
    Squad,
    NqOpen,
    AmbigNq,
    MedDialog,
    MultiWoz,
    Sharc,
    Generic,
    Transcript,
}

impl Adapter {
    pub const ALL: [Adapter; 8] = [
        Adapter::Squad,
        Adapter::NqOpen,
        Adapter::AmbigNq,
        Adapter::MedDialog,
        Adapter::MultiWoz,
        Adapter::Sharc,
        Adapter::Generic,
        Adapter::Transcript,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Adapter::Squad => "squad",
            Adapter::NqOpen => "nq_open",
            Adapter::AmbigNq => "ambignq",
            Adapter::MedDialog => "meddialog",
            Adapter::MultiWoz => "multiwoz",
            Adapter::Sharc => "sharc",
            Adapter::Generic => "generic",
            Adapter::Transcript => "transcript",
        }
    }
}

impl FromStr for Adapter {
    type Err = EvaluationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        Adapter::ALL
            .into_iter()
            .find(|a| a.as_str() == key)
            .ok_or_else(|| EvaluationError::UnknownAdapter(s.to_string()))
    }
}

/// Reads `path` with `adapter`, keeping the first `limit` interactions.
pub fn ingest_dataset(
    path: &Path,
    adapter: Adapter,
    limit: Option<usize>,
) -> Result<Vec<Interaction>, EvaluationError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvaluationError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| adapter.as_str().to_string());
    ingest_str(&text, adapter, &name, limit)
}

/// Like [`ingest_dataset`] over in-memory text. `name` prefixes generated
/// interaction ids.
pub fn ingest_str(
    text: &str,
    adapter: Adapter,
    name: &str,
    limit: Option<usize>,
) -> Result<Vec<Interaction>, EvaluationError> {
    let limit = limit.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    let mut emit = |i: Interaction| {
        out.push(i);
        out.len() < limit
    };
    match adapter {
        Adapter::Squad => squad(text, name, &mut emit)?,
        Adapter::NqOpen => nq_open(text, name, &mut emit)?,
        Adapter::AmbigNq => ambignq(text, name, &mut emit)?,
        Adapter::MedDialog => meddialog(text, name, &mut emit)?,
        Adapter::MultiWoz => multiwoz(text, name, &mut emit)?,
        Adapter::Sharc => sharc(text, name, &mut emit)?,
        Adapter::Generic => generic(text, name, &mut emit)?,
        Adapter::Transcript => {
            let all = parse_transcripts(text)
                .map_err(|e| EvaluationError::malformed(format!("line {}", e.line), &e.reason))?;
            for i in all {
                if !emit(i) {
                    break;
                }
            }
        }
    }
    Ok(out)
}

fn parse_json(text: &str) -> Result<Value, EvaluationError> {
    serde_json::from_str(text).map_err(|e| {
        EvaluationError::malformed(format!("line {} column {}", e.line(), e.column()), e)
    })
}

fn typed<T: DeserializeOwned>(value: &Value, locator: &str) -> Result<T, EvaluationError> {
    T::deserialize(value).map_err(|e| EvaluationError::malformed(locator, e))
}

fn json_lines(text: &str) -> impl Iterator<Item = (String, Result<Value, EvaluationError>)> + '_ {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let locator = format!("line {}", i + 1);
            let v = serde_json::from_str(l).map_err(|e| EvaluationError::malformed(&locator, e));
            (locator, v)
        })
}

fn require_question(q: &str, locator: &str) -> Result<String, EvaluationError> {
    let q = q.trim();
    if q.is_empty() {
        return Err(EvaluationError::malformed(locator, "empty question"));
    }
    Ok(q.to_string())
}

/// One turn: `h ?1 question`, `m !1 first gold answer`.
fn single_turn(
    id: String,
    question: &str,
    answers: Vec<String>,
    background: Vec<String>,
    locator: &str,
) -> Result<Interaction, EvaluationError> {
    let (h, m) = (AgentId::human(), AgentId::machine());
    let question = require_question(question, locator)?;
    let reply = Payload::Answer {
        qid: 1,
        texts: answers.first().cloned().into_iter().collect(),
    };
    let messages = vec![
        Message::new(h.clone(), Payload::question(1, question), m.clone()),
        Message::new(m, reply, h),
    ];
    Ok(validate_interaction(messages)
        .map_err(|e| EvaluationError::malformed(locator, e))?
        .with_id(id)
        .with_background(background)
        .with_gold(Some(Gold { qid: 1, answers })))
}

fn dedup(mut answers: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::BTreeSet::new();
    answers.retain(|a| seen.insert(a.clone()));
    answers
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<Value>,
}
#[derive(Deserialize)]
struct SquadArticle {
    paragraphs: Vec<Value>,
}
#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<Value>,
}
#[derive(Deserialize)]
struct SquadQa {
    #[serde(default)]
    id: Option<String>,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
}
#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
}

fn squad(text: &str, name: &str, emit: &mut dyn FnMut(Interaction) -> bool) -> Result<(), EvaluationError> {
    let file: SquadFile = typed(&parse_json(text)?, "root")?;
    let mut n = 0;
    for (a, article) in file.data.iter().enumerate() {
        let loc_a = format!("data[{a}]");
        let article: SquadArticle = typed(article, &loc_a)?;
        for (p, para) in article.paragraphs.iter().enumerate() {
            let loc_p = format!("{loc_a}.paragraphs[{p}]");
            let para: SquadParagraph = typed(para, &loc_p)?;
            for (q, qa) in para.qas.iter().enumerate() {
                let loc = format!("{loc_p}.qas[{q}]");
                let qa: SquadQa = typed(qa, &loc)?;
                let id = qa.id.unwrap_or_else(|| format!("{name}-{n}"));
                let answers = dedup(qa.answers.into_iter().map(|a| a.text).collect());
                let i = single_turn(id, &qa.question, answers, vec![para.context.clone()], &loc)?;
                n += 1;
                if !emit(i) {
                    return Ok(());
                }
            }
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct NqRecord {
    question: String,
    answer: Vec<String>,
}

fn nq_open(text: &str, name: &str, emit: &mut dyn FnMut(Interaction) -> bool) -> Result<(), EvaluationError> {
    for (n, (loc, value)) in json_lines(text).enumerate() {
        let rec: NqRecord = typed(&value?, &loc)?;
        let i = single_turn(format!("{name}-{n}"), &rec.question, rec.answer, vec![], &loc)?;
        if !emit(i) {
            break;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct AmbigRecord {
    #[serde(default)]
    id: Option<String>,
    question: String,
    #[serde(default)]
    annotations: Vec<AmbigAnnotation>,
}
#[derive(Deserialize)]
#[serde(tag = "type")]
enum AmbigAnnotation {
    #[serde(rename = "singleAnswer")]
    Single { answer: Vec<String> },
    #[serde(rename = "multipleQAs")]
    Multiple {
        #[serde(rename = "qaPairs")]
        qa_pairs: Vec<AmbigPair>,
    },
}
#[derive(Deserialize)]
struct AmbigPair {
    answer: Vec<String>,
}

fn ambignq(text: &str, name: &str, emit: &mut dyn FnMut(Interaction) -> bool) -> Result<(), EvaluationError> {
    let records: Vec<Value> = typed(&parse_json(text)?, "root")?;
    for (n, value) in records.iter().enumerate() {
        let loc = format!("[{n}]");
        let rec: AmbigRecord = typed(value, &loc)?;
        let answers = rec
            .annotations
            .into_iter()
            .flat_map(|a| match a {
                AmbigAnnotation::Single { answer } => answer,
                AmbigAnnotation::Multiple { qa_pairs } => {
                    qa_pairs.into_iter().flat_map(|p| p.answer).collect()
                }
            })
            .collect();
        let id = rec.id.unwrap_or_else(|| format!("{name}-{n}"));
        if !emit(single_turn(id, &rec.question, dedup(answers), vec![], &loc)?) {
            break;
        }
    }
    Ok(())
}

/// Builds a dialogue interaction from alternating utterances, the first from
/// the human. The last machine utterance is the gold answer.
fn dialogue(
    id: String,
    utterances: &[String],
    background: Vec<String>,
    locator: &str,
) -> Result<Interaction, EvaluationError> {
    let (h, m) = (AgentId::human(), AgentId::machine());
    let usable = utterances.len() - utterances.len() % 2;
    if usable == 0 {
        return Err(EvaluationError::malformed(locator, "dialogue needs a human and a machine utterance"));
    }
    let mut messages = Vec::with_capacity(usable);
    let mut next_qid = 1;
    let mut open_human_q = None;
    let mut open_machine_q = None;
    for (idx, text) in utterances[..usable].iter().enumerate() {
        let text = text.trim();
        let asks = text.ends_with('?');
        let payload = if idx % 2 == 0 {
            if idx == 0 {
                require_question(text, locator)?;
            }
            if let Some(beta) = open_machine_q.take() {
                Payload::answer(beta, text)
            } else if idx == 0 || asks {
                open_human_q = Some(next_qid);
                next_qid += 1;
                Payload::question(next_qid - 1, text)
            } else {
                Payload::statement(text)
            }
        } else if asks {
            open_machine_q = Some(next_qid);
            next_qid += 1;
            Payload::question(next_qid - 1, text)
        } else {
            match open_human_q {
                Some(alpha) => Payload::answer(alpha, text),
                None => Payload::statement(text),
            }
        };
        if matches!(&payload, Payload::Statement { texts } if texts.iter().all(|t| t.is_empty())) {
            return Err(EvaluationError::malformed(
                locator,
                format!("utterance {} is empty", idx + 1),
            ));
        }
        let (from, to) = if idx % 2 == 0 { (&h, &m) } else { (&m, &h) };
        messages.push(Message::new(from.clone(), payload, to.clone()));
    }
    let gold = utterances[usable - 1].trim().to_string();
    Ok(validate_interaction(messages)
        .map_err(|e| EvaluationError::malformed(locator, e))?
        .with_id(id)
        .with_background(background)
        .with_gold(Some(Gold { qid: 1, answers: vec![gold] })))
}

#[derive(Deserialize)]
struct MedRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    description: Option<String>,
    utterances: Vec<String>,
}

fn strip_speaker(u: &str) -> (Option<&str>, &str) {
    match u.split_once(':') {
        Some((who, rest)) if matches!(who.trim().to_ascii_lowercase().as_str(), "patient" | "doctor") => {
            (Some(if who.trim().eq_ignore_ascii_case("patient") { "patient" } else { "doctor" }), rest.trim())
        }
        _ => (None, u.trim()),
    }
}

fn meddialog(text: &str, name: &str, emit: &mut dyn FnMut(Interaction) -> bool) -> Result<(), EvaluationError> {
    let records: Vec<Value> = typed(&parse_json(text)?, "root")?;
    for (n, value) in records.iter().enumerate() {
        let loc = format!("[{n}]");
        let rec: MedRecord = typed(value, &loc)?;
        let mut utterances: Vec<String> = Vec::new();
        let mut started = false;
        for u in &rec.utterances {
            let (who, body) = strip_speaker(u);
            if !started && who == Some("doctor") {
                continue;
            }
            started = true;
            utterances.push(body.to_string());
        }
        let background: Vec<String> = rec
            .description
            .filter(|d| !d.trim().is_empty())
            .into_iter()
            .collect();
        let id = rec.id.unwrap_or_else(|| format!("{name}-{n}"));
        if !emit(dialogue(id, &utterances, background, &loc)?) {
            break;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct WozDialogue {
    log: Vec<WozTurn>,
}
#[derive(Deserialize)]
struct WozTurn {
    text: String,
}

fn multiwoz(text: &str, _name: &str, emit: &mut dyn FnMut(Interaction) -> bool) -> Result<(), EvaluationError> {
    let root: serde_json::Map<String, Value> = typed(&parse_json(text)?, "root")?;
    for (id, value) in &root {
        let d: WozDialogue = typed(value, id)?;
        let utterances: Vec<String> = d.log.into_iter().map(|t| t.text).collect();
        if !emit(dialogue(id.clone(), &utterances, vec![], id)?) {
            break;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
struct SharcRecord {
    #[serde(default)]
    utterance_id: Option<String>,
    snippet: String,
    #[serde(default)]
    scenario: String,
    question: String,
    #[serde(default)]
    history: Vec<SharcFollowUp>,
    answer: String,
}
#[derive(Deserialize)]
struct SharcFollowUp {
    follow_up_question: String,
    follow_up_answer: String,
}

fn sharc(text: &str, name: &str, emit: &mut dyn FnMut(Interaction) -> bool) -> Result<(), EvaluationError> {
    let records: Vec<Value> = typed(&parse_json(text)?, "root")?;
    let (h, m) = (AgentId::human(), AgentId::machine());
    for (n, value) in records.iter().enumerate() {
        let loc = format!("[{n}]");
        let rec: SharcRecord = typed(value, &loc)?;
        let mut human = vec![Payload::question(1, require_question(&rec.question, &loc)?)];
        let mut machine = Vec::new();
        for (j, f) in rec.history.iter().enumerate() {
            let beta = j as u32 + 2;
            machine.push(Payload::question(beta, f.follow_up_question.trim()));
            human.push(Payload::answer(beta, f.follow_up_answer.trim()));
        }
        machine.push(Payload::answer(1, rec.answer.trim()));
        let messages = human
            .into_iter()
            .zip(machine)
            .flat_map(|(a, b)| [Message::new(h.clone(), a, m.clone()), Message::new(m.clone(), b, h.clone())])
            .collect();
        let background = [rec.snippet, rec.scenario]
            .into_iter()
            .filter(|s| !s.trim().is_empty())
            .collect();
        let i = validate_interaction(messages)
            .map_err(|e| EvaluationError::malformed(&loc, e))?
            .with_id(rec.utterance_id.unwrap_or_else(|| format!("{name}-{n}")))
            .with_background(background)
            .with_gold(Some(Gold { qid: 1, answers: vec![rec.answer.trim().to_string()] }));
        if !emit(i) {
            break;
        }
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenericRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    background: Vec<String>,
    question: String,
    #[serde(default)]
    answers: Vec<String>,
}

fn generic(text: &str, name: &str, emit: &mut dyn FnMut(Interaction) -> bool) -> Result<(), EvaluationError> {
    for (n, (loc, value)) in json_lines(text).enumerate() {
        let rec: GenericRecord = typed(&value?, &loc)?;
        let id = rec.id.unwrap_or_else(|| format!("{name}-{n}"));
        if !emit(single_turn(id, &rec.question, rec.answers, rec.background, &loc)?) {
            break;
        }
    }
    Ok(())
}
