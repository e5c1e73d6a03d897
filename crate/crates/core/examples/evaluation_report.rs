//! Run a small dataset with and without the transducer, grade both runs
//! and print the accuracy and diagnostics tables.

use std::sync::Arc;

use qtransducer::agent::AgentRuntime;
use qtransducer::demo::demo_backend;
use qtransducer::evaluation::{
    accuracy_report, auto_grade, diagnostics_report, export_grades, import_grades, ingest_str,
    load_run, render_accuracy_report, render_diagnostics_report, Adapter,
};
use qtransducer::llm_backend::ChatBackend;
use qtransducer::pipeline::{run_dataset, Mode, RunDir, RunManifest, Runtimes, DEFAULT_CLARIFICATION_STUB};

const DATA: &str = r#"{"question":"Who scored the music for the film?","answers":["John Powell"]}
{"question":"Who scored the music for How to Train Your Dragon?","answers":["John Powell"]}
{"question":"What about headaches?","answers":["rest"]}
"#;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let seeds = ingest_str(DATA, Adapter::Generic, "demo", None)?;
    let backend: Arc<dyn ChatBackend> = Arc::new(demo_backend("demo"));
    let runtimes = Runtimes {
        transducer: AgentRuntime::new(backend.clone()),
        responder: AgentRuntime::new(backend),
    };
    let root = tempfile::tempdir()?;
    let mut runs = Vec::new();
    for mode in [Mode::WithoutTransducer, Mode::WithTransducer] {
        let manifest = RunManifest {
            mode,
            turns: 2,
            transducer_backend: "demo".into(),
            responder_backend: "demo".into(),
            human_simulation: "stub after turn 1".into(),
            stub: DEFAULT_CLARIFICATION_STUB.into(),
        };
        let dir = root.path().join(mode.as_str());
        run_dataset(&RunDir::create(&dir, &manifest)?, "demo", &seeds, &manifest, &runtimes, 2).await?;

        let mut run = load_run(&dir)?;
        if mode == Mode::WithTransducer {
            // A human grade for one turn; auto-grading leaves it alone.
            import_grades(&mut run, "session_id,k,candidate_answer,gold_answers,grade\ndemo-00002,2,,,disagree\n")?;
        }
        auto_grade(&mut run)?;
        if mode == Mode::WithTransducer {
            print!("grading sheet:\n{}\n", export_grades(&run));
        }
        runs.push(run);
    }

    print!("{}", render_accuracy_report(&accuracy_report(&runs)?));
    println!();
    print!("{}", render_diagnostics_report(&diagnostics_report(&runs)?));
    Ok(())
}
