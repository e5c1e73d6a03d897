//! Dataset ingestion, grading and reports.
//!
//! A run directory (see [`crate::pipeline::RunDir`]) is graded per turn,
//! either by hand through a CSV sheet or by the containment-based
//! [`auto_agree`] proxy. Reports only consume graded records.

mod grading;
mod ingest;
mod reports;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grading::{
    auto_agree, auto_grade, export_grades, import_grades, load_run, normalize_answer,
    AutoGradeSummary, Grade, GradeBook, GradeRecord, Grader, ImportSummary, RunData,
    GRADES_FILE, SHEET_HEADER,
};
pub use ingest::{ingest_dataset, ingest_str, Adapter, DEFAULT_SAMPLE};
pub use reports::{
    accuracy_report, diagnostics_report, render_accuracy_report, render_diagnostics_report,
    AccuracyReport, AccuracyRow, CallRow, DiagnosticsReport, LabelRow, ResolveRow, ResolveTable,
};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum EvaluationError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed record at {locator}: {reason}")]
    MalformedRecord { locator: String, reason: String },
    #[error("unknown adapter `{0}` (expected squad, nq_open, ambignq, meddialog, multiwoz, sharc, generic or transcript)")]
    UnknownAdapter(String),
    #[error("unknown session/turn `{session_id}` k={k}")]
    UnknownSessionId { session_id: String, k: usize },
    #[error("conflicting human grades for `{session_id}` k={k}: {existing} vs {new}")]
    DuplicateGradeConflict {
        session_id: String,
        k: usize,
        existing: Grade,
        new: Grade,
    },
    #[error("{} ungraded record(s), first: {}", .offenders.len(), .offenders.first().map(|(s, k)| format!("{s} k={k}")).unwrap_or_default())]
    UngradedRecords { offenders: Vec<(String, usize)> },
    #[error("dataset `{0}` has no sessions")]
    EmptyDataset(String),
    #[error("grading sheet line {line}: {reason}")]
    InvalidSheet { line: usize, reason: String },
    #[error("run directory {0} is locked by another grade import")]
    Locked(String),
}

impl EvaluationError {
    pub(crate) fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        EvaluationError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    pub(crate) fn malformed(locator: impl Into<String>, reason: impl fmt::Display) -> Self {
        EvaluationError::MalformedRecord {
            locator: locator.into(),
            reason: reason.to_string(),
        }
    }
}

/// Exact fraction. Displays rounded half-up to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        Self { num, den }
    }

    pub fn value(self) -> Option<f64> {
        (self.den != 0).then(|| self.num as f64 / self.den as f64)
    }

    /// Cross-multiplied comparison with another fraction.
    pub fn equals(self, num: u64, den: u64) -> bool {
        u128::from(self.num) * u128::from(den) == u128::from(num) * u128::from(self.den)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 0 {
            return f.pad("-");
        }
        let (n, d) = (u128::from(self.num), u128::from(self.den));
        let hundredths = (n * 200 + d) / (2 * d);
        f.pad(&format!("{}.{:02}", hundredths / 100, hundredths % 100))
    }
}

/// Left-aligns the first `left` columns and right-aligns the rest.
pub(crate) fn render_table(headers: &[String], rows: &[Vec<String>], left: usize) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i < left {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        format!("{}\n", parts.join("  ").trim_end())
    };
    let mut out = line(headers);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for row in rows {
        out.push_str(&line(row));
    }
    out
}
