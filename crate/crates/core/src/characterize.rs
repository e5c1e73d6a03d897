//! Retroactive detection of possibly-incomplete and possibly-ambiguous
//! questions in finished interactions, and dataset profiling into the
//! C1..C4 categories.
//!
//! Both detectors look at a window of two consecutive turns:
//!
//! * possibly incomplete: `a` asks `?α(q)`, `b` replies with a counter
//!   question `?β`, `a` answers it with `!β`, then `b` says anything.
//! * possibly ambiguous: `a` asks `?α(q)`, `b` answers `!α`, `a` follows up
//!   with a statement, then `b` says anything.
//!
//! These rules need the reply, so they only apply after the fact.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Interaction, Payload};

/// Default boundary between "low" and "mid-to-high" proportions.
pub const DEFAULT_TAU: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagKind {
    PossiblyIncomplete,
    PossiblyAmbiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuestionFlag {
    pub interaction_id: String,
    /// 1-based index of the turn holding the flagged question.
    pub turn_index: usize,
    pub qid: u32,
    pub kind: FlagKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Low incompleteness, low ambiguity.
    C1,
    /// Low incompleteness, mid-to-high ambiguity.
    C2,
    /// Mid-to-high incompleteness, low ambiguity.
    C3,
    /// Mid-to-high incompleteness, mid-to-high ambiguity.
    C4,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Category::C1 => "C1",
            Category::C2 => "C2",
            Category::C3 => "C3",
            Category::C4 => "C4",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub dataset: String,
    pub n: usize,
    pub incomplete_count: usize,
    pub ambiguous_count: usize,
    pub p_incomplete: f64,
    pub p_ambiguous: f64,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CharacterizeError {
    #[error("dataset `{0}` has no interactions")]
    EmptyDataset(String),
}

/// Turn indices `i` where the two-turn window `(T_i, T_i+1)` matches the
/// possibly-incomplete pattern.
pub fn flag_possibly_incomplete(interaction: &Interaction) -> Vec<QuestionFlag> {
    scan(interaction, FlagKind::PossiblyIncomplete, |reply, next_first| {
        match (reply, next_first) {
            (Payload::Question { qid: beta, .. }, Payload::Answer { qid: answered, .. }) => {
                beta == answered
            }
            _ => false,
        }
    })
}

/// Turn indices `i` where the window matches the possibly-ambiguous pattern.
pub fn flag_possibly_ambiguous(interaction: &Interaction) -> Vec<QuestionFlag> {
    scan(interaction, FlagKind::PossiblyAmbiguous, |_, next_first| {
        matches!(next_first, Payload::Statement { .. })
    })
}

fn scan(
    interaction: &Interaction,
    kind: FlagKind,
    rest_matches: impl Fn(&Payload, &Payload) -> bool,
) -> Vec<QuestionFlag> {
    interaction
        .turns()
        .windows(2)
        .enumerate()
        .filter_map(|(idx, w)| {
            let Payload::Question { qid: alpha, .. } = &w[0].first().payload else {
                return None;
            };
            let reply = &w[0].second().payload;
            let reply_ok = match kind {
                FlagKind::PossiblyIncomplete => reply.is_question(),
                FlagKind::PossiblyAmbiguous => {
                    matches!(reply, Payload::Answer { qid, .. } if qid == alpha)
                }
            };
            (reply_ok && rest_matches(reply, &w[1].first().payload)).then(|| QuestionFlag {
                interaction_id: interaction.id().to_string(),
                turn_index: idx + 1,
                qid: *alpha,
                kind,
            })
        })
        .collect()
}

/// Both flag kinds, sorted by turn index.
pub fn flag_interaction(interaction: &Interaction) -> Vec<QuestionFlag> {
    let mut flags = flag_possibly_incomplete(interaction);
    flags.extend(flag_possibly_ambiguous(interaction));
    flags.sort_by_key(|f| (f.turn_index, f.kind));
    flags
}

/// Turn index of the first question sent by the initiating agent.
pub fn initial_question_turn(interaction: &Interaction) -> Option<usize> {
    interaction
        .initiator_messages()
        .position(|m| m.payload.is_question())
        .map(|p| p + 1)
}

/// Maps a pair of proportions to a category; `p < tau` counts as low.
pub fn categorize(p_incomplete: f64, p_ambiguous: f64, tau: f64) -> Category {
    match (p_incomplete >= tau, p_ambiguous >= tau) {
        (false, false) => Category::C1,
        (false, true) => Category::C2,
        (true, false) => Category::C3,
        (true, true) => Category::C4,
    }
}

/// Fractions of interactions whose initial question is flagged, per kind.
pub fn profile_dataset(
    dataset: &str,
    interactions: &[Interaction],
    tau: f64,
) -> Result<DatasetProfile, CharacterizeError> {
    if interactions.is_empty() {
        return Err(CharacterizeError::EmptyDataset(dataset.to_string()));
    }
    let mut incomplete_count = 0;
    let mut ambiguous_count = 0;
    for interaction in interactions {
        let Some(initial) = initial_question_turn(interaction) else {
            continue;
        };
        let flags = flag_interaction(interaction);
        let hit = |kind| flags.iter().any(|f| f.kind == kind && f.turn_index == initial);
        if hit(FlagKind::PossiblyIncomplete) {
            incomplete_count += 1;
        }
        if hit(FlagKind::PossiblyAmbiguous) {
            ambiguous_count += 1;
        }
    }
    let n = interactions.len();
    let p_incomplete = incomplete_count as f64 / n as f64;
    let p_ambiguous = ambiguous_count as f64 / n as f64;
    Ok(DatasetProfile {
        dataset: dataset.to_string(),
        n,
        incomplete_count,
        ambiguous_count,
        p_incomplete,
        p_ambiguous,
        category: categorize(p_incomplete, p_ambiguous, tau),
    })
}

/// Plain-text table with columns dataset, n, p_incomplete, p_ambiguous,
/// category.
pub fn render_profile_table(profiles: &[DatasetProfile]) -> String {
    let width = profiles
        .iter()
        .map(|p| p.dataset.len())
        .chain(["dataset".len()])
        .max()
        .unwrap_or(7);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>12}  {:>11}  {}\n",
        "dataset", "n", "p_incomplete", "p_ambiguous", "category"
    );
    for p in profiles {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>12.2}  {:>11.2}  {}\n",
            p.dataset, p.n, p.p_incomplete, p.p_ambiguous, p.category
        ));
    }
    out
}
