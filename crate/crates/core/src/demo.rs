//! Canned agent dialogues: the recorded "How to Train Your Dragon" trace
//! and a small rule-based backend for demos and UI development, plus the
//! two-children height dialogue used as a protocol fixture.

use crate::llm_backend::{ScriptEntry, ScriptMatch, ScriptReply, ScriptedBackend};
use crate::protocol::{validate_interaction, AgentId, Gold, Interaction, Message, Payload};

pub const DRAGON_QUESTION: &str = "Who scored the music for How to Train Your Dragon?";
pub const DRAGON_GROUND_TRUTH: &str = "John Powell";
pub const DRAGON_FINAL_ANSWER: &str = "John Powell scored the music for How to Train Your Dragon.";

/// Classifier output from the recorded trace. The label comes back as
/// `complete`, outside the declared label set.
pub const DRAGON_CLASSIFY_RESPONSE: &str = "The question seems straightforward, but I should verify if it's complete and clear. I'll start by classifying the question. Action: Classify Question. Action Input: Who scored the music for How to Train Your Dragon?, ('complete', 'The question is complete because it clearly asks for a specific piece of information (the person who scored the music) and provides enough context (the movie title \"How to Train Your Dragon\") for the question to be understood and answered.')";

/// Answer-agent output from the recorded trace, ending in the final answer.
pub const DRAGON_ANSWER_RESPONSE: &str = "Thought: Since the question is classified as complete, I can proceed to answer it directly. Action: Answer Question. Action Input: Who scored the music for How to Train Your Dragon?', 'The music for the movie \"How to Train Your Dragon\" was scored by John Powell. He is a British composer of film scores, and his work on the film earned him critical acclaim. Powell's score perfectly complemented the movie's themes of adventure, friendship, and self-discovery. He went on to score the sequels as well, including \"How to Train Your Dragon 2\" and \"How to Train Your Dragon: The Hidden World\".')\nFinal Answer: John Powell scored the music for How to Train Your Dragon.";

/// Substrings identifying each goal's instruction inside a prompt.
pub const CLASSIFIER_MARKER: &str = "You are a classifier responsible";
pub const RESOLVER_MARKER: &str = "resolve incomplete or ambiguous questions";
pub const ANSWER_MARKER: &str = "Answer a complete or resolved question";

fn rule(markers: &[&str], reply: &str) -> ScriptEntry {
    ScriptEntry {
        matcher: ScriptMatch::AllOf(markers.iter().map(|s| s.to_string()).collect()),
        reply: ScriptReply::Text(reply.to_string()),
        repeat: false,
    }
}

fn current_question(q: &str) -> String {
    format!("\nQuestion: {q}\n")
}

/// One classifier call and one answer call, replaying the recorded trace.
pub fn dragon_script() -> Vec<ScriptEntry> {
    let q = current_question(DRAGON_QUESTION);
    vec![
        rule(&[CLASSIFIER_MARKER, &q], DRAGON_CLASSIFY_RESPONSE),
        rule(&[ANSWER_MARKER, &q], DRAGON_ANSWER_RESPONSE),
    ]
}

pub fn dragon_backend(name: &str) -> ScriptedBackend {
    ScriptedBackend::new(name, dragon_script())
}

/// Repeating rules covering the recorded trace, an incomplete question, an
/// ambiguous one that needs clarification, and generic fallbacks.
pub fn demo_script() -> Vec<ScriptEntry> {
    let t9 = current_question(DRAGON_QUESTION);
    let headaches = current_question("What about headaches?");
    let film = "Who scored the music for the film?";
    let film_q = current_question(film);
    [
        rule(&[CLASSIFIER_MARKER, &t9], DRAGON_CLASSIFY_RESPONSE),
        rule(&[ANSWER_MARKER, &t9], DRAGON_ANSWER_RESPONSE),
        rule(
            &[CLASSIFIER_MARKER, &headaches],
            "Classification: Incomplete\nExplanation: The question does not say which medication or condition it refers to.",
        ),
        rule(
            &[RESOLVER_MARKER, &headaches, "ibuprofen"],
            "Resolved: Can taking ibuprofen cause headaches?\nExplanation: The earlier statement names ibuprofen as the medication.",
        ),
        rule(
            &[ANSWER_MARKER, "Can taking ibuprofen cause headaches?"],
            "Answer: Headaches are an uncommon side effect of ibuprofen; frequent use can also cause medication-overuse headaches.",
        ),
        rule(
            &[CLASSIFIER_MARKER, &film_q],
            "Classification: Ambiguous\nExplanation: The question does not say which film is meant.",
        ),
        rule(
            &[RESOLVER_MARKER, &film_q],
            "Clarify: Which film do you mean?\nExplanation: Several films could be meant.",
        ),
        rule(&[ANSWER_MARKER, "How to Train Your Dragon"], &format!("Final Answer: {DRAGON_FINAL_ANSWER}")),
        rule(
            &[CLASSIFIER_MARKER],
            "Classification: Normal\nExplanation: The question is specific enough to answer.",
        ),
        rule(&[RESOLVER_MARKER], "Clarify: Could you add more detail to your question?"),
        rule(
            &[ANSWER_MARKER],
            "Answer: I do not have enough information to answer that. Could you provide more details?",
        ),
    ]
    .into_iter()
    .map(ScriptEntry::repeating)
    .collect()
}

pub fn demo_backend(name: &str) -> ScriptedBackend {
    ScriptedBackend::new(name, demo_script())
}

pub const HEIGHT_CORRECTION: &str = "Your answer is not completely correct since height has to be positive";

/// The four-turn height dialogue: two statements, a question answered with
/// both square roots, then a corrective statement and a revised answer.
pub fn child_height() -> Interaction {
    let (h, m) = (AgentId::human(), AgentId::machine());
    let turns = [
        (Payload::statement("Child x has a height is 4 ft."), Payload::statement("ok")),
        (
            Payload::statement("The height of child y is the square root of the height of child x"),
            Payload::statement("ok"),
        ),
        (Payload::question(1, "What is the height of y"), Payload::answer(1, "y is +2 or -2")),
        (Payload::statement(HEIGHT_CORRECTION), Payload::answer(1, "y is +2")),
    ];
    let messages = turns
        .into_iter()
        .flat_map(|(a, b)| [Message::new(h.clone(), a, m.clone()), Message::new(m.clone(), b, h.clone())])
        .collect();
    validate_interaction(messages)
        .expect("fixture is a valid interaction")
        .with_id("child-height")
        .with_gold(Some(Gold {
            qid: 1,
            answers: vec!["2".into(), "+2".into()],
        }))
}

/// A single-turn interaction carrying the recorded question and its gold
/// answer.
pub fn dragon_seed() -> Interaction {
    let (h, m) = (AgentId::human(), AgentId::machine());
    validate_interaction(vec![
        Message::new(h.clone(), Payload::question(1, DRAGON_QUESTION), m.clone()),
        Message::new(m, Payload::answer(1, DRAGON_GROUND_TRUTH), h),
    ])
    .expect("fixture is a valid interaction")
    .with_id("dragon")
    .with_gold(Some(Gold {
        qid: 1,
        answers: vec![DRAGON_GROUND_TRUTH.into()],
    }))
}

/// Short, underspecified questions for smoke-testing a live endpoint.
pub const SMOKE_QUESTIONS: [&str; 10] = [
    "Who won the game last night?",
    "How tall is it?",
    "When did he become president?",
    "What is the capital?",
    "Is it safe to take with food?",
    "Which one is better?",
    "How long does the flight take?",
    "Who wrote the book?",
    "What year was the bridge built?",
    "How much does the ticket cost?",
];
