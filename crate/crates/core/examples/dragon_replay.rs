//! Replay the recorded "How to Train Your Dragon" dialogue through the
//! with-transducer pipeline, write a run directory and auto-grade it.

use std::sync::Arc;

use qtransducer::agent::AgentRuntime;
use qtransducer::demo::{dragon_backend, dragon_seed};
use qtransducer::evaluation::{auto_grade, load_run};
use qtransducer::llm_backend::ChatBackend;
use qtransducer::pipeline::{run_dataset, Mode, RunDir, RunManifest, Runtimes, DEFAULT_CLARIFICATION_STUB};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let backend: Arc<dyn ChatBackend> = Arc::new(dragon_backend("dragon"));
    let runtimes = Runtimes {
        transducer: AgentRuntime::new(backend.clone()),
        responder: AgentRuntime::new(backend),
    };
    let manifest = RunManifest {
        mode: Mode::WithTransducer,
        turns: 1,
        transducer_backend: "dragon".into(),
        responder_backend: "dragon".into(),
        human_simulation: "replay".into(),
        stub: DEFAULT_CLARIFICATION_STUB.into(),
    };
    let dir = tempfile::tempdir()?;
    let run_dir = RunDir::create(dir.path(), &manifest)?;
    let states = run_dataset(&run_dir, "dragon", &[dragon_seed()], &manifest, &runtimes, 1).await?;

    let rec = &states[0].records[0];
    let t = rec.transduction.as_ref().unwrap();
    println!("raw label: {:?} -> {}", t.raw_label, t.label);
    println!("explanation: {}", t.explanation);
    println!("answer: {}", rec.answer.as_deref().unwrap_or("-"));
    println!("calls: {:?}", rec.calls_by_role);

    let mut run = load_run(dir.path())?;
    let summary = auto_grade(&mut run)?;
    println!("auto-graded {} turn(s), {} agree", summary.graded, summary.agree);
    println!("\nturns.jsonl:\n{}", std::fs::read_to_string(dir.path().join("turns.jsonl"))?);
    Ok(())
}
