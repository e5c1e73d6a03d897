//! The question-transducer: `resolve(classify(context))`.
//!
//! `classify` labels a context that ends in a question as incomplete,
//! ambiguous or normal. `resolve` leaves normal contexts untouched and asks
//! the resolver agent to rewrite the others; the rewritten (or clarifying)
//! question replaces the terminal question, preceded by an explanation
//! statement. Everything before the terminal question is preserved.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, AgentRuntime, AgentTrace, GoalKind, Label, StructuredOutput};
use crate::protocol::{Context, ContextItem, Payload};

/// Tells the resolver how to mark a clarifying question. Sent as a goal note
/// after the resolver instruction, which only defines the `Resolved:` form.
pub const CLARIFY_FORMAT_NOTE: &str =
    "If you return a clarifying question instead, format it exactly as: 'Clarify: <clarifying question>'";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledContext {
    pub context: Context,
    pub label: Label,
    /// Label as written by the model, before normalization.
    pub raw_label: Option<String>,
    pub explanation: String,
    pub trace: Option<AgentTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outcome {
    Passthrough,
    Resolved { question: String },
    Clarify { question: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransductionRecord {
    pub input_context: Context,
    pub label: Label,
    pub raw_label: Option<String>,
    pub explanation: String,
    pub outcome: Outcome,
    pub output_context: Context,
    pub llm_calls: u64,
    /// Agent traces in call order (classifier first).
    pub traces: Vec<AgentTrace>,
}

impl TransductionRecord {
    /// True when the classifier agent actually ran.
    pub fn classified(&self) -> bool {
        self.traces.iter().any(|t| t.goal == GoalKind::ClassifyQuestion)
    }

    pub fn calls_for(&self, goal: GoalKind) -> u64 {
        self.traces
            .iter()
            .filter(|t| t.goal == goal)
            .map(|t| t.total_llm_calls)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransducerError {
    #[error("agent failure in {stage}: {source}")]
    AgentFailure { stage: GoalKind, source: AgentError },
    #[error("{stage} agent stopped without a usable result")]
    NoResult { stage: GoalKind, trace: AgentTrace },
}

impl TransducerError {
    pub fn trace(&self) -> Option<&AgentTrace> {
        match self {
            TransducerError::AgentFailure { source, .. } => source.trace(),
            TransducerError::NoResult { trace, .. } => Some(trace),
        }
    }

    pub fn stage(&self) -> GoalKind {
        match self {
            TransducerError::AgentFailure { stage, .. } | TransducerError::NoResult { stage, .. } => {
                *stage
            }
        }
    }
}

/// Labels `context`. Contexts that do not end in a question are normal and
/// cost no LLM call.
pub async fn classify(
    context: &Context,
    background: &[String],
    runtime: &AgentRuntime,
) -> Result<LabeledContext, TransducerError> {
    if context.terminal_question().is_none() {
        return Ok(LabeledContext {
            context: context.clone(),
            label: Label::Normal,
            raw_label: None,
            explanation: String::new(),
            trace: None,
        });
    }
    let stage = GoalKind::ClassifyQuestion;
    let goal = runtime.templates.goal(stage);
    let run = runtime
        .run(context, background, &goal)
        .await
        .map_err(|source| TransducerError::AgentFailure { stage, source })?;
    match run.result {
        Some(StructuredOutput::Classification {
            label,
            raw_label,
            explanation,
        }) => Ok(LabeledContext {
            context: context.clone(),
            label,
            raw_label: Some(raw_label),
            explanation,
            trace: Some(run.trace),
        }),
        _ => Err(TransducerError::NoResult {
            stage,
            trace: run.trace,
        }),
    }
}

/// Rewrites incomplete or ambiguous questions; normal contexts pass through.
pub async fn resolve(
    labeled: LabeledContext,
    background: &[String],
    runtime: &AgentRuntime,
) -> Result<TransductionRecord, TransducerError> {
    let LabeledContext {
        context,
        label,
        raw_label,
        explanation,
        trace,
    } = labeled;
    let mut traces: Vec<AgentTrace> = trace.into_iter().collect();

    let terminal = context.last().filter(|i| i.payload.is_question()).cloned();
    let (Some(question_item), Label::Incomplete | Label::Ambiguous) = (terminal, label) else {
        return Ok(TransductionRecord {
            input_context: context.clone(),
            label,
            raw_label,
            explanation,
            outcome: Outcome::Passthrough,
            output_context: context,
            llm_calls: traces.iter().map(|t| t.total_llm_calls).sum(),
            traces,
        });
    };

    let stage = GoalKind::ResolveQuestion;
    let goal = runtime
        .templates
        .goal(stage)
        .with_note(format!("Classification: {}", label.display_name()))
        .with_note(format!("Explanation: {explanation}"))
        .with_note(CLARIFY_FORMAT_NOTE);
    let run = runtime
        .run(&context, background, &goal)
        .await
        .map_err(|source| TransducerError::AgentFailure { stage, source })?;
    let (outcome, new_question, resolver_explanation) = match run.result {
        Some(StructuredOutput::Resolved {
            question,
            explanation,
        }) => (
            Outcome::Resolved {
                question: question.clone(),
            },
            question,
            explanation,
        ),
        Some(StructuredOutput::Clarify {
            question,
            explanation,
        }) => (
            Outcome::Clarify {
                question: question.clone(),
            },
            question,
            explanation,
        ),
        _ => {
            return Err(TransducerError::NoResult {
                stage,
                trace: run.trace,
            })
        }
    };
    traces.push(run.trace);

    let statement = resolver_explanation
        .filter(|e| !e.trim().is_empty())
        .or_else(|| Some(explanation.clone()).filter(|e| !e.trim().is_empty()))
        .unwrap_or_else(|| format!("The question was classified as {label}."));
    let qid = question_item.payload.qid().expect("terminal item is a question");
    let sender = question_item.sender.clone();

    let mut items: Vec<ContextItem> = context.items()[..context.len() - 1].to_vec();
    items.push(ContextItem::new(sender.clone(), Payload::statement(statement)));
    items.push(ContextItem::new(sender, Payload::question(qid, new_question)));

    Ok(TransductionRecord {
        input_context: context,
        label,
        raw_label,
        explanation,
        outcome,
        output_context: Context::from_items(items),
        llm_calls: traces.iter().map(|t| t.total_llm_calls).sum(),
        traces,
    })
}

/// `resolve(classify(context))`.
pub async fn transduce(
    context: &Context,
    background: &[String],
    runtime: &AgentRuntime,
) -> Result<TransductionRecord, TransducerError> {
    let labeled = classify(context, background, runtime).await?;
    resolve(labeled, background, runtime).await
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::llm_backend::{ChatBackend, ScriptedBackend};
    use crate::protocol::AgentId;

    fn runtime(responses: &[&str]) -> (AgentRuntime, Arc<ScriptedBackend>) {
        let backend = Arc::new(ScriptedBackend::sequence("t", responses));
        (AgentRuntime::new(backend.clone()), backend)
    }

    fn medication_context() -> Context {
        let mut c = Context::new();
        c.push(AgentId::human(), Payload::statement("I have been taking ibuprofen for a week."));
        c.push(AgentId::machine(), Payload::statement("ok"));
        c.push(AgentId::human(), Payload::question(1, "What about headaches?"));
        c
    }

    #[tokio::test]
    async fn non_question_context_costs_nothing() {
        let (rt, backend) = runtime(&[]);
        let mut c = Context::new();
        c.push(AgentId::human(), Payload::statement("hello"));
        let labeled = classify(&c, &[], &rt).await.unwrap();
        assert_eq!(labeled.label, Label::Normal);
        assert!(labeled.explanation.is_empty());
        let rec = transduce(&c, &[], &rt).await.unwrap();
        assert_eq!(rec.output_context, c);
        assert_eq!(rec.llm_calls, 0);
        assert_eq!(backend.stats().calls, 0);
    }

    #[tokio::test]
    async fn scripted_ambiguous_classification() {
        let (rt, _) = runtime(&["Classification: Ambiguous\nExplanation: sign of square root"]);
        let mut c = Context::new();
        c.push(AgentId::human(), Payload::question(1, "What is the height of y"));
        let labeled = classify(&c, &[], &rt).await.unwrap();
        assert_eq!(labeled.label, Label::Ambiguous);
        assert_eq!(labeled.explanation, "sign of square root");
    }

    #[tokio::test]
    async fn normal_label_passes_through() {
        let (rt, _) = runtime(&[]);
        let labeled = LabeledContext {
            context: medication_context(),
            label: Label::Normal,
            raw_label: None,
            explanation: "fine".into(),
            trace: None,
        };
        let rec = resolve(labeled, &[], &rt).await.unwrap();
        assert_eq!(rec.outcome, Outcome::Passthrough);
        assert_eq!(rec.output_context, medication_context());
    }

    #[tokio::test]
    async fn incomplete_question_is_resolved() {
        let (rt, _) = runtime(&[
            "Classification: Incomplete\nExplanation: the medication is not named in the question",
            "Resolved: Does ibuprofen cause headaches?",
        ]);
        let input = medication_context();
        let rec = transduce(&input, &[], &rt).await.unwrap();
        assert_eq!(
            rec.outcome,
            Outcome::Resolved {
                question: "Does ibuprofen cause headaches?".into()
            }
        );
        let out = rec.output_context.items();
        assert_eq!(out.len(), input.len() + 1);
        assert_eq!(&out[..input.len() - 1], &input.items()[..input.len() - 1]);
        assert_eq!(
            out[input.len() - 1].payload,
            Payload::statement("the medication is not named in the question")
        );
        assert_eq!(
            out.last().unwrap().payload,
            Payload::question(1, "Does ibuprofen cause headaches?")
        );
        assert_eq!(rec.llm_calls, 2);
        assert_eq!(rec.calls_for(GoalKind::ResolveQuestion), 1);
    }

    #[tokio::test]
    async fn unresolvable_question_yields_clarify() {
        let (rt, _) = runtime(&[
            "Classification: Ambiguous\nExplanation: several films share the title",
            "Clarify: Do you mean the 2010 film or the 2025 remake?",
        ]);
        let mut c = Context::new();
        c.push(AgentId::human(), Payload::question(4, "Who scored the music for the film?"));
        let rec = transduce(&c, &[], &rt).await.unwrap();
        assert!(matches!(rec.outcome, Outcome::Clarify { .. }));
        assert_eq!(rec.output_context.terminal_question().unwrap().0, 4);
    }

    #[tokio::test]
    async fn resolver_prompt_receives_classifier_explanation() {
        let (rt, _) = runtime(&[
            "Classification: Incomplete\nExplanation: UNIQUE-EXPLANATION",
            "Resolved: Better?",
        ]);
        let rec = transduce(&medication_context(), &[], &rt).await.unwrap();
        let resolve_prompt = &rec.traces[1].steps[0].prompt;
        assert!(resolve_prompt.contains("UNIQUE-EXPLANATION"));
        assert!(resolve_prompt.contains(CLARIFY_FORMAT_NOTE));
    }

    #[tokio::test]
    async fn classifier_failure_surfaces_trace() {
        let (rt, _) = runtime(&["nonsense", "nonsense", "nonsense", "nonsense", "nonsense"]);
        let err = transduce(&medication_context(), &[], &rt).await.unwrap_err();
        assert_eq!(err.stage(), GoalKind::ClassifyQuestion);
        assert_eq!(err.trace().unwrap().iterations, 5);
    }
}
