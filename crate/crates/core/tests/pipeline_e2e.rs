use std::fs;
use std::path::Path;
use std::sync::Arc;

use qtransducer::agent::{AgentRuntime, Label};
use qtransducer::demo::{
    demo_backend, child_height, dragon_backend, dragon_seed, ANSWER_MARKER, CLASSIFIER_MARKER,
    HEIGHT_CORRECTION, RESOLVER_MARKER, DRAGON_FINAL_ANSWER,
};
use qtransducer::evaluation::{auto_grade, load_run, Grade};
use qtransducer::llm_backend::{ChatBackend, ScriptEntry, ScriptMatch, ScriptReply, ScriptedBackend};
use qtransducer::pipeline::{
    next_human_message, run_dataset, run_session, HumanSource, Mode, RunDir, RunManifest,
    Runtimes, SessionState, DEFAULT_CLARIFICATION_STUB,
};
use qtransducer::protocol::{validate_interaction, AgentId, Message, Payload};
use qtransducer::transducer::Outcome;

fn runtimes(t: Arc<dyn ChatBackend>, r: Arc<dyn ChatBackend>) -> Runtimes {
    Runtimes {
        transducer: AgentRuntime::new(t),
        responder: AgentRuntime::new(r),
    }
}

fn manifest(mode: Mode, turns: usize) -> RunManifest {
    RunManifest {
        mode,
        turns,
        transducer_backend: "t".into(),
        responder_backend: "r".into(),
        human_simulation: "replay".into(),
        stub: DEFAULT_CLARIFICATION_STUB.into(),
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for name in ["manifest.json", "turns.jsonl", "sessions.jsonl"] {
        files.push((name.to_string(), fs::read(dir.join(name)).unwrap()));
    }
    let mut transcripts: Vec<_> = fs::read_dir(dir.join("transcripts"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    transcripts.sort();
    for p in transcripts {
        files.push((p.file_name().unwrap().to_string_lossy().into(), fs::read(&p).unwrap()));
    }
    files
}

async fn dragon_run(dir: &Path) {
    let b: Arc<dyn ChatBackend> = Arc::new(dragon_backend("t9"));
    let rt = runtimes(b.clone(), b);
    let m = manifest(Mode::WithTransducer, 1);
    let run_dir = RunDir::create(dir, &m).unwrap();
    let states = run_dataset(&run_dir, "dragon", &[dragon_seed()], &m, &rt, 1).await.unwrap();
    assert_eq!(states[0].records[0].answer.as_deref(), Some(DRAGON_FINAL_ANSWER));
}

#[tokio::test]
async fn dragon_replay_is_byte_identical_and_agrees() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    dragon_run(a.path()).await;
    dragon_run(b.path()).await;
    assert_eq!(snapshot(a.path()), snapshot(b.path()));

    let mut run = load_run(a.path()).unwrap();
    let summary = auto_grade(&mut run).unwrap();
    assert_eq!((summary.graded, summary.agree), (1, 1));
    assert_eq!(run.grades.grade("dragon-00000", 1), Grade::Agree);
    let t = run.turns[0].record.transduction.as_ref().unwrap();
    assert_eq!(t.raw_label.as_deref(), Some("complete"));
    assert_eq!(t.label, Label::Normal);
}

#[tokio::test]
async fn demo_sessions_are_deterministic() {
    let go = || async {
        let b: Arc<dyn ChatBackend> = Arc::new(demo_backend("demo"));
        let rt = runtimes(b.clone(), b);
        let source = HumanSource::scripted(["Who scored the music for the film?", "How to Train Your Dragon", "Thanks?"]);
        run_session(SessionState::new("s", Mode::WithTransducer, source), 3, &rt, None).await
    };
    let (x, y) = (go().await, go().await);
    assert_eq!(x, y);
    assert_eq!(x.records.len(), 3);
    assert!(x.records[0].clarify_emitted.is_some());
    assert_eq!(x.records[1].human_message, Payload::answer(2, "How to Train Your Dragon"));
    assert_eq!(x.records[1].answer.as_deref(), Some(DRAGON_FINAL_ANSWER));
}

#[tokio::test]
async fn call_accounting_three_roles_three_turns() {
    let rule = |marker: &str, reply: &str| {
        ScriptEntry {
            matcher: ScriptMatch::Contains(marker.into()),
            reply: ScriptReply::Text(reply.into()),
            repeat: true,
        }
    };
    let b = Arc::new(ScriptedBackend::new(
        "acct",
        vec![
            rule(CLASSIFIER_MARKER, "Classification: Incomplete\nExplanation: missing subject"),
            rule(RESOLVER_MARKER, "Resolved: What is the full question?"),
            rule(ANSWER_MARKER, "Answer: an answer"),
        ],
    ));
    let rt = runtimes(b.clone(), b.clone());
    let source = HumanSource::scripted(["first?", "second?", "third?"]);
    let s = run_session(SessionState::new("s", Mode::WithTransducer, source), 3, &rt, None).await;
    assert_eq!(s.stats.calls, 9);
    for role in ["classify_question", "resolve_question", "answer_question"] {
        assert_eq!(s.stats.role(role), 3, "{role}");
        assert_eq!(b.stats().role(role), 3, "{role}");
    }
    assert_eq!(b.stats().calls, 9);
    assert!(s.records.iter().all(|r| matches!(
        r.transduction.as_ref().map(|t| &t.outcome),
        Some(Outcome::Resolved { .. })
    )));
}

#[tokio::test]
async fn without_transducer_never_classifies() {
    let b = Arc::new(demo_backend("demo"));
    let rt = runtimes(b.clone(), b.clone());
    let source = HumanSource::scripted(["What about headaches?", "ok", "Who scored the music for the film?"]);
    let s = run_session(SessionState::new("s", Mode::WithoutTransducer, source), 3, &rt, None).await;
    assert_eq!(s.records.len(), 3);
    assert!(s.records.iter().all(|r| r.transduction.is_none() && r.answer.is_some()));
    assert_eq!(s.stats.role("classify_question"), 0);
    assert_eq!(s.stats.role("resolve_question"), 0);
    assert_eq!(b.stats().role("classify_question"), 0);
    assert_eq!(s.stats.calls, 3);
}

#[tokio::test]
async fn height_replay_sends_the_correction_at_turn_four() {
    let source = HumanSource::replay(child_height());
    let mut state = SessionState::new("s", Mode::WithoutTransducer, source.clone());
    state.source_cursor = 3;
    assert_eq!(next_human_message(&source, &state), Some(Payload::statement(HEIGHT_CORRECTION)));

    let b = Arc::new(demo_backend("demo"));
    let rt = runtimes(b.clone(), b);
    let s = run_session(SessionState::new("s", Mode::WithoutTransducer, source), 4, &rt, None).await;
    assert_eq!(s.records[3].human_message, Payload::statement(HEIGHT_CORRECTION));
    // Context strictly grows each turn.
    assert_eq!(s.context.len(), 8);
}

#[tokio::test]
async fn replay_exhaustion_ends_early() {
    let (h, m) = (AgentId::human(), AgentId::machine());
    let seed = validate_interaction(vec![
        Message::new(h.clone(), Payload::question(1, "q?"), m.clone()),
        Message::new(m.clone(), Payload::answer(1, "a"), h.clone()),
        Message::new(h.clone(), Payload::statement("more"), m.clone()),
        Message::new(m, Payload::answer(1, "b"), h),
    ])
    .unwrap();
    let b = Arc::new(demo_backend("demo"));
    let rt = runtimes(b.clone(), b);
    let s = run_session(SessionState::new("s", Mode::WithTransducer, HumanSource::replay(seed)), 3, &rt, None).await;
    assert_eq!(s.records.len(), 2);
    assert!(s.ended_early.as_deref().unwrap().contains("2 of 3"));
}

#[tokio::test]
async fn single_turn_seed_uses_stub_and_persists_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let b: Arc<dyn ChatBackend> = Arc::new(demo_backend("demo"));
    let rt = runtimes(b.clone(), b);
    let m = manifest(Mode::WithTransducer, 3);
    let run_dir = RunDir::create(dir.path(), &m).unwrap();
    let seeds = [dragon_seed(), dragon_seed()];
    let states = run_dataset(&run_dir, "d", &seeds, &m, &rt, 2).await.unwrap();
    assert_eq!(states.len(), 2);
    assert_eq!(states[0].session_id, "d-00000");
    assert_eq!(states[0].records[1].human_message, Payload::statement(DEFAULT_CLARIFICATION_STUB));
    let transcript = fs::read_to_string(dir.path().join("transcripts/d-00001.jsonl")).unwrap();
    let parsed = qtransducer::protocol::parse_transcript(transcript.trim_end()).unwrap();
    assert_eq!(parsed.len(), 3);
    let run = load_run(dir.path()).unwrap();
    assert_eq!(run.turns.len(), 6);
    assert_eq!(run.sessions.len(), 2);
}
