//! Send a few underspecified questions through a real chat-completions
//! endpoint. Needs QTX_LIVE_ENDPOINT (full URL), QTX_LIVE_MODEL and the key
//! in QTX_LIVE_API_KEY.

use std::sync::Arc;

use qtransducer::agent::AgentRuntime;
use qtransducer::demo::SMOKE_QUESTIONS;
use qtransducer::llm_backend::{ChatBackend, HttpBackend, HttpConfig};
use qtransducer::pipeline::{run_session, HumanSource, Mode, Runtimes, SessionState};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let (Ok(endpoint), Ok(model)) = (std::env::var("QTX_LIVE_ENDPOINT"), std::env::var("QTX_LIVE_MODEL")) else {
        eprintln!("set QTX_LIVE_ENDPOINT, QTX_LIVE_MODEL and QTX_LIVE_API_KEY");
        return Ok(());
    };
    let backend = Arc::new(HttpBackend::new("live", HttpConfig::new(endpoint, model, "QTX_LIVE_API_KEY")));
    let rt = Runtimes {
        transducer: AgentRuntime::new(backend.clone()),
        responder: AgentRuntime::new(backend.clone()),
    };
    for q in SMOKE_QUESTIONS {
        let state = SessionState::new("smoke", Mode::WithTransducer, HumanSource::scripted([q]));
        let s = run_session(state, 1, &rt, None).await;
        let r = &s.records[0];
        println!(
            "{q}\n  label={:?} clarify={:?} answer={:?} error={:?}",
            r.label(),
            r.clarify_emitted,
            r.answer,
            r.error
        );
    }
    let stats = backend.stats();
    println!("calls={} retries={} latency={:?}", stats.calls, stats.retries, stats.total_latency);
    Ok(())
}
