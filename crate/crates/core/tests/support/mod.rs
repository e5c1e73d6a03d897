//! Generators and brute-force recounts shared by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::TestRunner;

use qtransducer::agent::Label;
use qtransducer::characterize::FlagKind;
use qtransducer::evaluation::{Grade, GradeBook, GradeRecord, Grader, RunData};
use qtransducer::llm_backend::CallStats;
use qtransducer::pipeline::{Mode, RunManifest, SessionSummary, TurnLine, TurnRecord};
use qtransducer::protocol::{
    validate_interaction, AgentId, Context, Gold, Interaction, Message, Payload,
};
use qtransducer::transducer::{Outcome, TransductionRecord};

pub fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z][a-zA-Z0-9 ?!.,'\"\\\\\n\u{e9}\u{4e2d}]{0,16}"
}

/// Small qid range so counter-question and answer ids collide often.
pub fn payload(allow_termination: bool) -> BoxedStrategy<Payload> {
    let q = (1u32..4, text()).prop_map(|(qid, t)| Payload::question(qid, t));
    let a = (1u32..4, prop::collection::vec(text(), 0..3))
        .prop_map(|(qid, texts)| Payload::Answer { qid, texts });
    let s = prop::collection::vec(text(), 1..3).prop_map(|texts| Payload::Statement { texts });
    if allow_termination {
        prop_oneof![4 => q, 4 => a, 4 => s, 1 => Just(Payload::Termination)].boxed()
    } else {
        prop_oneof![q, a, s].boxed()
    }
}

pub fn interaction(max_turns: usize) -> impl Strategy<Value = Interaction> {
    (
        prop::collection::vec((payload(false), payload(true)), 1..=max_turns),
        "[a-z0-9-]{0,8}",
        prop::collection::vec(text(), 0..3),
        prop::option::of((1u32..4, prop::collection::vec(text(), 0..3))),
    )
        .prop_map(|(turns, id, background, gold)| {
            let (h, m) = (AgentId::human(), AgentId::machine());
            let messages = turns
                .into_iter()
                .flat_map(|(a, b)| [Message::new(h.clone(), a, m.clone()), Message::new(m.clone(), b, h.clone())])
                .collect();
            validate_interaction(messages)
                .expect("generated turns are valid")
                .with_id(id)
                .with_background(background)
                .with_gold(gold.map(|(qid, answers)| Gold { qid, answers }))
        })
}

/// `n` values from a deterministic runner.
pub fn sample<S: Strategy>(strategy: S, n: usize) -> Vec<S::Value> {
    let mut runner = TestRunner::deterministic();
    (0..n)
        .map(|_| strategy.new_tree(&mut runner).expect("strategy").current())
        .collect()
}

/// Flags computed by scanning the raw message list two turns at a time.
pub fn oracle_flags(interaction: &Interaction) -> BTreeSet<(usize, u32, FlagKind)> {
    let msgs: Vec<&Payload> = interaction.messages().map(|m| &m.payload).collect();
    let mut out = BTreeSet::new();
    let turns = msgs.len() / 2;
    for i in 0..turns.saturating_sub(1) {
        let (m1, m2, m3) = (msgs[2 * i], msgs[2 * i + 1], msgs[2 * i + 2]);
        if let Payload::Question { qid: alpha, .. } = m1 {
            if let (Payload::Question { qid: beta, .. }, Payload::Answer { qid: ans, .. }) = (m2, m3) {
                if beta == ans {
                    out.insert((i + 1, *alpha, FlagKind::PossiblyIncomplete));
                }
            }
            if let (Payload::Answer { qid: ans, .. }, Payload::Statement { .. }) = (m2, m3) {
                if ans == alpha {
                    out.insert((i + 1, *alpha, FlagKind::PossiblyAmbiguous));
                }
            }
        }
    }
    out
}

pub fn manifest(mode: Mode, turns: usize, transducer: &str) -> RunManifest {
    RunManifest {
        mode,
        turns,
        transducer_backend: transducer.into(),
        responder_backend: "r".into(),
        human_simulation: "synthetic".into(),
        stub: String::new(),
    }
}

fn synthetic_turn(session: &str, dataset: &str, k: usize, mode: Mode, label: u8, outcome: u8) -> TurnLine {
    let transduction = (mode == Mode::WithTransducer && label < 4).then(|| {
        let label_v = [Label::Incomplete, Label::Ambiguous, Label::Normal, Label::Normal][label as usize];
        let outcome = match (label_v, outcome % 2) {
            (Label::Normal, _) => Outcome::Passthrough,
            (_, 0) => Outcome::Resolved { question: "rewritten?".into() },
            _ => Outcome::Clarify { question: "which?".into() },
        };
        TransductionRecord {
            input_context: Context::new(),
            label: label_v,
            // label 3: the classifier failed and the turn fell open
            raw_label: (label != 3).then(|| label_v.as_str().to_string()),
            explanation: String::new(),
            outcome,
            output_context: Context::new(),
            llm_calls: 1,
            traces: vec![],
        }
    });
    let clarify = matches!(transduction.as_ref().map(|t| &t.outcome), Some(Outcome::Clarify { .. }));
    TurnLine {
        session_id: session.into(),
        dataset: dataset.into(),
        record: TurnRecord {
            k,
            human_message: Payload::question(1, "q?"),
            transduction,
            answer: (!clarify).then(|| format!("answer {k}")),
            clarify_emitted: clarify.then(|| "which?".to_string()),
            llm_calls_this_turn: 1,
            calls_by_role: BTreeMap::new(),
            answer_trace: None,
            error: None,
        },
    }
}

/// A run with random session lengths, labels, outcomes, call counts and
/// grades. When `fully_graded` is false some turns are left ungraded.
pub fn synthetic_run(mode: Mode, label: &str, fully_graded: bool) -> impl Strategy<Value = RunData> {
    let session = (
        0usize..2,
        1usize..=3,
        prop::collection::vec((0u8..5, 0u8..2, 0u8..3), 3),
        0u64..12,
        0u64..4,
    );
    let label = label.to_string();
    prop::collection::vec(session, 1..12).prop_map(move |specs| {
        let mut sessions = Vec::new();
        let mut turns = Vec::new();
        let mut book = GradeBook::default();
        for (idx, (ds, len, per_turn, calls, classify_calls)) in specs.into_iter().enumerate() {
            let dataset = ["alpha", "beta"][ds];
            let id = format!("{dataset}-{idx:05}");
            let mut per_role = BTreeMap::new();
            per_role.insert("answer_question".to_string(), calls);
            if mode == Mode::WithTransducer {
                per_role.insert("classify_question".to_string(), classify_calls);
            }
            sessions.push(SessionSummary {
                session_id: id.clone(),
                dataset: dataset.into(),
                interaction_id: id.clone(),
                gold_answers: vec!["gold".into()],
                turns_completed: len,
                ended_early: (len < 3).then(|| "exhausted".into()),
                stats: CallStats {
                    calls: calls + if mode == Mode::WithTransducer { classify_calls } else { 0 },
                    per_role,
                    ..CallStats::default()
                },
            });
            for (k0, (lab, out, grade)) in per_turn.into_iter().take(len).enumerate() {
                let k = k0 + 1;
                turns.push(synthetic_turn(&id, dataset, k, mode, lab, out));
                let grade = match grade {
                    0 => Grade::Agree,
                    1 => Grade::Disagree,
                    _ if fully_graded => Grade::Agree,
                    _ => continue,
                };
                book.insert(GradeRecord {
                    session_id: id.clone(),
                    k,
                    candidate_answer: String::new(),
                    gold_answers: vec![],
                    grade,
                    grader: if k % 2 == 0 { Grader::Human } else { Grader::Auto },
                });
            }
        }
        RunData {
            root: PathBuf::new(),
            label: label.clone(),
            manifest: manifest(mode, 3, "t"),
            sessions,
            turns,
            grades: book,
        }
    })
}

fn grade_of(run: &RunData, session: &str, k: usize) -> Option<Grade> {
    run.grades
        .records()
        .find(|g| g.session_id == session && g.k == k)
        .map(|g| g.grade)
}

/// (dataset, k) -> (agreeing sessions, dataset sessions), counted directly.
pub fn recount_accuracy(run: &RunData) -> BTreeMap<(String, usize), (u64, u64)> {
    let mut out = BTreeMap::new();
    let datasets: BTreeSet<&str> = run.sessions.iter().map(|s| s.dataset.as_str()).collect();
    for d in datasets {
        let members: Vec<&SessionSummary> = run.sessions.iter().filter(|s| s.dataset == d).collect();
        for k in 1..=run.manifest.turns {
            let mut agree = 0;
            for s in &members {
                let has_turn = run.turns.iter().any(|t| t.session_id == s.session_id && t.record.k == k);
                if has_turn && grade_of(run, &s.session_id, k) == Some(Grade::Agree) {
                    agree += 1;
                }
            }
            out.insert((d.to_string(), k), (agree, members.len() as u64));
        }
    }
    out
}

/// (dataset, k) -> ([incomplete, ambiguous, normal], sessions).
pub fn recount_labels(run: &RunData) -> BTreeMap<(String, usize), ([u64; 3], u64)> {
    let mut out = BTreeMap::new();
    let datasets: BTreeSet<&str> = run.sessions.iter().map(|s| s.dataset.as_str()).collect();
    for d in datasets {
        let n = run.sessions.iter().filter(|s| s.dataset == d).count() as u64;
        for k in 1..=run.manifest.turns {
            let mut counts = [0u64; 3];
            for t in run.turns.iter().filter(|t| t.dataset == d && t.record.k == k) {
                if let Some(tr) = &t.record.transduction {
                    if tr.raw_label.is_some() {
                        let slot = match tr.label {
                            Label::Incomplete => 0,
                            Label::Ambiguous => 1,
                            Label::Normal => 2,
                        };
                        counts[slot] += 1;
                    }
                }
            }
            out.insert((d.to_string(), k), (counts, n));
        }
    }
    out
}

/// (dataset, k) -> (resolved and agree, non-normal classified).
pub fn recount_resolve(run: &RunData) -> BTreeMap<(String, usize), (u64, u64)> {
    let mut out = BTreeMap::new();
    let datasets: BTreeSet<&str> = run.sessions.iter().map(|s| s.dataset.as_str()).collect();
    for d in datasets {
        for k in 1..=run.manifest.turns {
            let (mut num, mut den) = (0, 0);
            for t in run.turns.iter().filter(|t| t.dataset == d && t.record.k == k) {
                let Some(tr) = &t.record.transduction else { continue };
                if tr.raw_label.is_none() || tr.label == Label::Normal {
                    continue;
                }
                den += 1;
                if matches!(tr.outcome, Outcome::Resolved { .. })
                    && grade_of(run, &t.session_id, k) == Some(Grade::Agree)
                {
                    num += 1;
                }
            }
            out.insert((d.to_string(), k), (num, den));
        }
    }
    out
}

/// dataset -> (total calls, sessions).
pub fn recount_calls(run: &RunData) -> BTreeMap<String, (u64, u64)> {
    let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for s in &run.sessions {
        let e = out.entry(s.dataset.clone()).or_default();
        e.0 += s.stats.calls;
        e.1 += 1;
    }
    out
}
