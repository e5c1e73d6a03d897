//! The ReAct loop against a scripted backend: one malformed reply, a
//! format nudge, then a parseable answer.

use std::sync::Arc;

use qtransducer::agent::{AgentRuntime, GoalKind, PromptTemplates};
use qtransducer::llm_backend::{ChatBackend, ScriptedBackend};
use qtransducer::protocol::{AgentId, Context, Payload};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let backend = Arc::new(ScriptedBackend::sequence(
        "scripted",
        &[
            "Thought: I know this one.",
            "Thought: formatting properly now.\nAnswer: Paris",
        ],
    ));
    let runtime = AgentRuntime::new(backend.clone());

    let mut ctx = Context::new();
    ctx.push(AgentId::human(), Payload::question(1, "What is the capital of France?"));
    let goal = PromptTemplates::default().goal(GoalKind::AnswerQuestion);
    let run = runtime.run(&ctx, &[], &goal).await?;

    for (n, step) in run.trace.steps.iter().enumerate() {
        println!("step {}: {:?}", n + 1, step.raw_response);
        if !step.note.is_empty() {
            println!("  note: {}", step.note);
        }
    }
    println!("result: {:?}", run.result);
    println!("llm calls: {}", backend.stats().calls);
    println!("\nlast prompt:\n{}", run.trace.steps.last().unwrap().prompt);
    Ok(())
}
