//! Classify and resolve three contexts with the bundled demo backend:
//! an ambiguous question, a normal one, and a context ending in a statement.

use std::sync::Arc;

use qtransducer::agent::AgentRuntime;
use qtransducer::demo::{demo_backend, DRAGON_QUESTION};
use qtransducer::llm_backend::ChatBackend;
use qtransducer::protocol::{AgentId, Context, Payload};
use qtransducer::transducer::transduce;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let backend = Arc::new(demo_backend("demo"));
    let runtime = AgentRuntime::new(backend.clone());
    let h = AgentId::human();

    let mut ambiguous = Context::new();
    ambiguous.push(h.clone(), Payload::question(1, "Who scored the music for the film?"));
    let mut normal = Context::new();
    normal.push(h.clone(), Payload::question(1, DRAGON_QUESTION));
    let mut statement = Context::new();
    statement.push(h, Payload::statement("Thanks, that helps."));

    for (name, ctx) in [("ambiguous", ambiguous), ("normal", normal), ("statement", statement)] {
        let rec = transduce(&ctx, &[], &runtime).await?;
        println!(
            "{name}: label={} outcome={:?} calls={} explanation={:?}",
            rec.label, rec.outcome, rec.llm_calls, rec.explanation
        );
        for item in rec.output_context.items() {
            println!("    [{}] {:?}", item.sender, item.payload);
        }
    }
    println!("backend calls by role: {:?}", backend.stats().per_role);
    Ok(())
}
