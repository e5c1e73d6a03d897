//! Per-turn accuracy and transducer diagnostics over graded runs.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::grading::{Grade, RunData};
use super::{render_table, EvaluationError, Ratio};
use crate::agent::Label;
use crate::pipeline::{Mode, TurnLine};
use crate::transducer::Outcome;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccuracyRow {
    pub dataset: String,
    pub k: usize,
    /// Run label, e.g. `without` or `with:gpt`.
    pub mode: String,
    pub agreeing: u64,
    pub sessions: u64,
    pub accuracy: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccuracyReport {
    pub runs: Vec<String>,
    pub rows: Vec<AccuracyRow>,
    pub n_per_dataset: BTreeMap<String, u64>,
}

fn datasets_of(run: &RunData) -> Result<BTreeMap<String, Vec<&str>>, EvaluationError> {
    let mut by_dataset: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for s in &run.sessions {
        by_dataset.entry(s.dataset.clone()).or_default().push(&s.session_id);
    }
    for t in &run.turns {
        if !by_dataset.contains_key(&t.dataset) {
            return Err(EvaluationError::EmptyDataset(t.dataset.clone()));
        }
    }
    if by_dataset.is_empty() {
        return Err(EvaluationError::EmptyDataset(format!("{} (no sessions)", run.label)));
    }
    Ok(by_dataset)
}

fn ungraded<'a>(run: &RunData, turns: impl Iterator<Item = &'a TurnLine>) -> Vec<(String, usize)> {
    turns
        .filter(|t| run.grades.grade(&t.session_id, t.record.k) == Grade::Ungraded)
        .map(|t| (t.session_id.clone(), t.record.k))
        .collect()
}

fn turn_index(run: &RunData) -> BTreeMap<(&str, usize), &TurnLine> {
    run.turns
        .iter()
        .map(|t| ((t.session_id.as_str(), t.record.k), t))
        .collect()
}

/// Accuracy at turn k = sessions whose turn-k answer is graded agree,
/// divided by all sessions of the dataset. Sessions that ended before k
/// count as not agreeing.
pub fn accuracy_report(runs: &[RunData]) -> Result<AccuracyReport, EvaluationError> {
    let offenders: Vec<(String, usize)> = runs.iter().flat_map(|r| ungraded(r, r.turns.iter())).collect();
    if !offenders.is_empty() {
        return Err(EvaluationError::UngradedRecords { offenders });
    }
    let mut rows = Vec::new();
    let mut n_per_dataset = BTreeMap::new();
    for run in runs {
        let index = turn_index(run);
        for (dataset, sessions) in datasets_of(run)? {
            let n = sessions.len() as u64;
            let entry = n_per_dataset.entry(dataset.clone()).or_insert(n);
            *entry = (*entry).max(n);
            for k in 1..=run.manifest.turns {
                let agreeing = sessions
                    .iter()
                    .filter(|s| index.contains_key(&(**s, k)) && run.grades.grade(s, k) == Grade::Agree)
                    .count() as u64;
                rows.push(AccuracyRow {
                    dataset: dataset.clone(),
                    k,
                    mode: run.label.clone(),
                    agreeing,
                    sessions: n,
                    accuracy: Ratio::new(agreeing, n),
                });
            }
        }
    }
    Ok(AccuracyReport {
        runs: runs.iter().map(|r| r.label.clone()).collect(),
        rows,
        n_per_dataset,
    })
}

/// Dataset and turn down the side, one column per run.
pub fn render_accuracy_report(report: &AccuracyReport) -> String {
    let mut headers = vec!["Dataset".to_string(), "Turn".to_string()];
    headers.extend(report.runs.iter().cloned());
    let keys: BTreeSet<(&str, usize)> = report.rows.iter().map(|r| (r.dataset.as_str(), r.k)).collect();
    let mut body = Vec::new();
    for (dataset, k) in keys {
        let mut row = vec![dataset.to_string(), k.to_string()];
        for run in &report.runs {
            let cell = report
                .rows
                .iter()
                .find(|r| r.dataset == dataset && r.k == k && &r.mode == run)
                .map(|r| r.accuracy.to_string())
                .unwrap_or_else(|| "-".into());
            row.push(cell);
        }
        body.push(row);
    }
    let mut out = render_table(&headers, &body, 1);
    let sizes: Vec<String> = report.n_per_dataset.iter().map(|(d, n)| format!("{d}={n}")).collect();
    out.push_str(&format!("\nsessions per dataset: {}\n", sizes.join(", ")));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelRow {
    pub run: String,
    pub dataset: String,
    pub k: usize,
    pub sessions: u64,
    pub incomplete: u64,
    pub ambiguous: u64,
    pub normal: u64,
    pub p_incomplete: Ratio,
    pub p_ambiguous: Ratio,
    pub p_normal: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResolveRow {
    pub run: String,
    pub dataset: String,
    pub k: usize,
    /// Turns the classifier labeled incomplete or ambiguous.
    pub non_normal: u64,
    /// Of those, turns with a resolved question whose answer was graded agree.
    pub resolved_agree: u64,
    pub accuracy: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ResolveTable {
    Rows { rows: Vec<ResolveRow> },
    Ungraded { offenders: Vec<(String, usize)> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CallRow {
    pub run: String,
    pub dataset: String,
    pub sessions: u64,
    pub total_calls: u64,
    pub mean_calls: Ratio,
    pub mean_per_role: BTreeMap<String, Ratio>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiagnosticsReport {
    pub labels: Vec<LabelRow>,
    pub resolve: ResolveTable,
    pub calls: Vec<CallRow>,
}

impl DiagnosticsReport {
    pub fn resolve_rows(&self) -> Result<&[ResolveRow], EvaluationError> {
        match &self.resolve {
            ResolveTable::Rows { rows } => Ok(rows),
            ResolveTable::Ungraded { offenders } => Err(EvaluationError::UngradedRecords {
                offenders: offenders.clone(),
            }),
        }
    }
}

/// Label counts, resolve accuracy and mean call counts. Only the resolve
/// table needs grades; when some are missing it lists the offenders instead
/// of rows.
pub fn diagnostics_report(runs: &[RunData]) -> Result<DiagnosticsReport, EvaluationError> {
    let mut labels = Vec::new();
    let mut resolve_rows = Vec::new();
    let mut offenders = Vec::new();
    let mut calls = Vec::new();

    for run in runs {
        let index = turn_index(run);
        for (dataset, sessions) in datasets_of(run)? {
            let n = sessions.len() as u64;

            let total: u64 = run
                .sessions
                .iter()
                .filter(|s| s.dataset == dataset)
                .map(|s| s.stats.calls)
                .sum();
            let mut roles: BTreeMap<String, u64> = BTreeMap::new();
            for s in run.sessions.iter().filter(|s| s.dataset == dataset) {
                for (role, c) in &s.stats.per_role {
                    *roles.entry(role.clone()).or_default() += c;
                }
            }
            calls.push(CallRow {
                run: run.label.clone(),
                dataset: dataset.clone(),
                sessions: n,
                total_calls: total,
                mean_calls: Ratio::new(total, n),
                mean_per_role: roles.into_iter().map(|(r, c)| (r, Ratio::new(c, n))).collect(),
            });

            if run.manifest.mode != Mode::WithTransducer {
                continue;
            }
            for k in 1..=run.manifest.turns {
                let at_k: Vec<&TurnLine> = sessions.iter().filter_map(|s| index.get(&(*s, k)).copied()).collect();
                let classified: Vec<(&TurnLine, Label)> = at_k
                    .iter()
                    .filter_map(|t| {
                        let tr = t.record.transduction.as_ref()?;
                        tr.raw_label.as_ref()?;
                        Some((*t, tr.label))
                    })
                    .collect();
                let count = |l: Label| classified.iter().filter(|(_, x)| *x == l).count() as u64;
                let (inc, amb, nor) = (count(Label::Incomplete), count(Label::Ambiguous), count(Label::Normal));
                labels.push(LabelRow {
                    run: run.label.clone(),
                    dataset: dataset.clone(),
                    k,
                    sessions: n,
                    incomplete: inc,
                    ambiguous: amb,
                    normal: nor,
                    p_incomplete: Ratio::new(inc, n),
                    p_ambiguous: Ratio::new(amb, n),
                    p_normal: Ratio::new(nor, n),
                });

                let non_normal: Vec<&TurnLine> = classified
                    .iter()
                    .filter(|(_, l)| *l != Label::Normal)
                    .map(|(t, _)| *t)
                    .collect();
                let resolved: Vec<&TurnLine> = non_normal
                    .iter()
                    .copied()
                    .filter(|t| {
                        matches!(
                            t.record.transduction.as_ref().map(|x| &x.outcome),
                            Some(Outcome::Resolved { .. })
                        )
                    })
                    .collect();
                offenders.extend(ungraded(run, resolved.iter().copied()));
                let agree = resolved
                    .iter()
                    .filter(|t| run.grades.grade(&t.session_id, k) == Grade::Agree)
                    .count() as u64;
                resolve_rows.push(ResolveRow {
                    run: run.label.clone(),
                    dataset: dataset.clone(),
                    k,
                    non_normal: non_normal.len() as u64,
                    resolved_agree: agree,
                    accuracy: Ratio::new(agree, non_normal.len() as u64),
                });
            }
        }
    }
    let resolve = if offenders.is_empty() {
        ResolveTable::Rows { rows: resolve_rows }
    } else {
        ResolveTable::Ungraded { offenders }
    };
    Ok(DiagnosticsReport { labels, resolve, calls })
}

pub fn render_diagnostics_report(report: &DiagnosticsReport) -> String {
    let mut out = String::from("Classifier labels per turn\n");
    let headers: Vec<String> = ["Run", "Dataset", "Turn", "Incomp.", "Ambig.", "Nor.", "counts (i/a/n of n)"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = report
        .labels
        .iter()
        .map(|r| {
            vec![
                r.run.clone(),
                r.dataset.clone(),
                r.k.to_string(),
                r.p_incomplete.to_string(),
                r.p_ambiguous.to_string(),
                r.p_normal.to_string(),
                format!("{}/{}/{} of {}", r.incomplete, r.ambiguous, r.normal, r.sessions),
            ]
        })
        .collect();
    out.push_str(&render_table(&headers, &rows, 2));
    out.push_str(
        "Proportions are over all sessions of the dataset. Turns where the classifier did not run \
         (no terminal question, session ended, classifier failed) are not counted, so rows can sum \
         to less than 1.\n",
    );

    out.push_str("\nResolved and accurate per turn\n");
    match &report.resolve {
        ResolveTable::Rows { rows } => {
            let headers: Vec<String> = ["Run", "Dataset", "Turn", "Accuracy", "agree/non-normal"]
                .map(String::from)
                .to_vec();
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.run.clone(),
                        r.dataset.clone(),
                        r.k.to_string(),
                        r.accuracy.to_string(),
                        format!("{}/{}", r.resolved_agree, r.non_normal),
                    ]
                })
                .collect();
            out.push_str(&render_table(&headers, &body, 2));
        }
        ResolveTable::Ungraded { offenders } => {
            out.push_str(&format!(
                "unavailable: {} resolved turn(s) are ungraded (grade the run first)\n",
                offenders.len()
            ));
        }
    }

    out.push_str("\nMean LLM calls per interaction\n");
    let roles: BTreeSet<&str> = report
        .calls
        .iter()
        .flat_map(|r| r.mean_per_role.keys().map(String::as_str))
        .collect();
    let mut headers: Vec<String> = ["Run", "Dataset", "Sessions", "Calls"].map(String::from).to_vec();
    headers.extend(roles.iter().map(|r| r.to_string()));
    let body: Vec<Vec<String>> = report
        .calls
        .iter()
        .map(|r| {
            let mut row = vec![
                r.run.clone(),
                r.dataset.clone(),
                r.sessions.to_string(),
                r.mean_calls.to_string(),
            ];
            row.extend(roles.iter().map(|role| {
                r.mean_per_role
                    .get(*role)
                    .map(|x| x.to_string())
                    .unwrap_or_else(|| "0.00".into())
            }));
            row
        })
        .collect();
    out.push_str(&render_table(&headers, &body, 2));
    out
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::evaluation::grading::{GradeBook, GradeRecord, Grader};
    use crate::llm_backend::CallStats;
    use crate::pipeline::{RunManifest, SessionSummary, TurnRecord};
    use crate::protocol::{Context, Payload};
    use crate::transducer::TransductionRecord;

    fn manifest(mode: Mode, turns: usize) -> RunManifest {
        RunManifest {
            mode,
            turns,
            transducer_backend: "t".into(),
            responder_backend: "r".into(),
            human_simulation: "scripted".into(),
            stub: String::new(),
        }
    }

    fn turn(session: &str, k: usize, label: Option<Label>, outcome: Outcome) -> TurnLine {
        let transduction = label.map(|label| TransductionRecord {
            input_context: Context::new(),
            label,
            raw_label: Some(label.as_str().into()),
            explanation: String::new(),
            outcome: outcome.clone(),
            output_context: Context::new(),
            llm_calls: 0,
            traces: vec![],
        });
        let clarify = matches!(outcome, Outcome::Clarify { .. });
        TurnLine {
            session_id: session.into(),
            dataset: "d".into(),
            record: TurnRecord {
                k,
                human_message: Payload::question(1, "q?"),
                transduction,
                answer: (!clarify).then(|| "a".to_string()),
                clarify_emitted: clarify.then(|| "which?".to_string()),
                llm_calls_this_turn: 0,
                calls_by_role: BTreeMap::new(),
                answer_trace: None,
                error: None,
            },
        }
    }

    fn session(id: &str, calls: u64) -> SessionSummary {
        SessionSummary {
            session_id: id.into(),
            dataset: "d".into(),
            interaction_id: id.into(),
            gold_answers: vec!["a".into()],
            turns_completed: 1,
            ended_early: None,
            stats: CallStats {
                calls,
                ..CallStats::default()
            },
        }
    }

    fn run(mode: Mode, sessions: Vec<SessionSummary>, turns: Vec<TurnLine>, grades: &[(&str, usize, Grade)]) -> RunData {
        let mut book = GradeBook::default();
        for (s, k, g) in grades {
            book.insert(GradeRecord {
                session_id: s.to_string(),
                k: *k,
                candidate_answer: String::new(),
                gold_answers: vec![],
                grade: *g,
                grader: Grader::Human,
            });
        }
        let manifest = manifest(mode, 1);
        RunData {
            root: PathBuf::new(),
            label: manifest.label(),
            manifest,
            sessions,
            turns,
            grades: book,
        }
    }

    #[test]
    fn three_of_four_agree() {
        let ids = ["s1", "s2", "s3", "s4"];
        let r = run(
            Mode::WithoutTransducer,
            ids.iter().map(|s| session(s, 1)).collect(),
            ids.iter().map(|s| turn(s, 1, None, Outcome::Passthrough)).collect(),
            &[("s1", 1, Grade::Agree), ("s2", 1, Grade::Agree), ("s3", 1, Grade::Agree), ("s4", 1, Grade::Disagree)],
        );
        let report = accuracy_report(&[r]).unwrap();
        assert_eq!(report.rows[0].accuracy, Ratio::new(3, 4));
        assert_eq!(report.rows[0].accuracy.to_string(), "0.75");
    }

    #[test]
    fn ungraded_records_are_refused() {
        let r = run(
            Mode::WithoutTransducer,
            vec![session("s1", 1)],
            vec![turn("s1", 1, None, Outcome::Passthrough)],
            &[],
        );
        assert_eq!(
            accuracy_report(&[r]),
            Err(EvaluationError::UngradedRecords { offenders: vec![("s1".into(), 1)] })
        );
    }

    #[test]
    fn empty_dataset() {
        let r = run(Mode::WithoutTransducer, vec![], vec![], &[]);
        assert!(matches!(accuracy_report(&[r]), Err(EvaluationError::EmptyDataset(_))));
    }

    #[test]
    fn label_proportions_and_mean_calls() {
        let resolved = || Outcome::Resolved { question: "r".into() };
        let r = run(
            Mode::WithTransducer,
            vec![session("s1", 3), session("s2", 5), session("s3", 4), session("s4", 4)],
            vec![
                turn("s1", 1, Some(Label::Incomplete), resolved()),
                turn("s2", 1, Some(Label::Incomplete), Outcome::Clarify { question: "c".into() }),
                turn("s3", 1, Some(Label::Ambiguous), resolved()),
                turn("s4", 1, Some(Label::Normal), Outcome::Passthrough),
            ],
            &[("s1", 1, Grade::Agree), ("s3", 1, Grade::Disagree)],
        );
        let d = diagnostics_report(&[r]).unwrap();
        let l = &d.labels[0];
        assert_eq!(
            (l.p_incomplete.to_string(), l.p_ambiguous.to_string(), l.p_normal.to_string()),
            ("0.50".into(), "0.25".into(), "0.25".into())
        );
        let rows = d.resolve_rows().unwrap();
        assert_eq!((rows[0].resolved_agree, rows[0].non_normal), (1, 3));
        assert_eq!(d.calls[0].mean_calls, Ratio::new(16, 4));
        assert_eq!(d.calls[0].mean_calls.to_string(), "4.00");
        let text = render_diagnostics_report(&d);
        assert!(text.contains("1/3"));
    }

    #[test]
    fn resolve_table_needs_grades_but_labels_do_not() {
        let r = run(
            Mode::WithTransducer,
            vec![session("s1", 3)],
            vec![turn("s1", 1, Some(Label::Ambiguous), Outcome::Resolved { question: "r".into() })],
            &[],
        );
        let d = diagnostics_report(&[r]).unwrap();
        assert_eq!(d.labels[0].ambiguous, 1);
        assert!(matches!(d.resolve_rows(), Err(EvaluationError::UngradedRecords { .. })));
    }

    #[test]
    fn accuracy_table_layout() {
        let report = AccuracyReport {
            runs: vec!["without".into()],
            rows: [92, 95, 97]
                .into_iter()
                .enumerate()
                .map(|(i, a)| AccuracyRow {
                    dataset: "SQuAD".into(),
                    k: i + 1,
                    mode: "without".into(),
                    agreeing: a,
                    sessions: 100,
                    accuracy: Ratio::new(a, 100),
                })
                .collect(),
            n_per_dataset: [("SQuAD".to_string(), 100)].into(),
        };
        let text = render_accuracy_report(&report);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[2], "SQuAD       1     0.92");
        assert_eq!(lines[3], "SQuAD       2     0.95");
        assert_eq!(lines[4], "SQuAD       3     0.97");
    }
}
