//! Build an interaction, inspect per-agent contexts, and round-trip it
//! through the JSONL transcript format.

use qtransducer::demo::child_height;
use qtransducer::protocol::{parse_transcript, render_transcript, validate_interaction, AgentId, Message, Payload};

fn main() -> anyhow::Result<()> {
    let (h, m) = (AgentId::human(), AgentId::machine());
    let interaction = validate_interaction(vec![
        Message::new(h.clone(), Payload::question(1, "How tall is it?"), m.clone()),
        Message::new(m.clone(), Payload::question(2, "Which building do you mean?"), h.clone()),
        Message::new(h.clone(), Payload::answer(2, "The Eiffel Tower"), m.clone()),
        Message::new(m.clone(), Payload::answer(1, "About 330 metres."), h.clone()),
    ])?
    .with_id("eiffel");

    for i in 1..=interaction.len() {
        let a = interaction.context_for(&h, i)?;
        let b = interaction.context_for(&m, i)?;
        println!("turn {i}: |C_human| = {}, |C_machine| = {}", a.len(), b.len());
    }

    // A first message of Termination is rejected.
    let bad = validate_interaction(vec![
        Message::new(h.clone(), Payload::Termination, m.clone()),
        Message::new(m, Payload::answer(1, "x"), h),
    ]);
    println!("termination first: {}", bad.unwrap_err());

    for i in [interaction, child_height()] {
        let line = render_transcript(&i);
        let back = parse_transcript(&line)?;
        assert_eq!(render_transcript(&back), line);
        println!("{line}");
    }
    Ok(())
}
