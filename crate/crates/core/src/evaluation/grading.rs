//! Grade records, the CSV grading sheet and the auto-grader.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::EvaluationError;
use crate::pipeline::{
    write_atomic, RunManifest, SessionSummary, TurnLine, MANIFEST_FILE, SESSIONS_FILE, TURNS_FILE,
};

pub const GRADES_FILE: &str = "grades.jsonl";
const LOCK_FILE: &str = "grades.lock";
pub const SHEET_HEADER: [&str; 5] = ["session_id", "k", "candidate_answer", "gold_answers", "grade"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Agree,
    Disagree,
    Ungraded,
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grade::Agree => "agree",
            Grade::Disagree => "disagree",
            Grade::Ungraded => "ungraded",
        })
    }
}

impl FromStr for Grade {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "agree" => Ok(Grade::Agree),
            "disagree" => Ok(Grade::Disagree),
            "" | "ungraded" => Ok(Grade::Ungraded),
            other => Err(format!("unknown grade `{other}` (agree, disagree or ungraded)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grader {
    Human,
    Auto,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub session_id: String,
    pub k: usize,
    pub candidate_answer: String,
    pub gold_answers: Vec<String>,
    pub grade: Grade,
    pub grader: Grader,
}

/// Grades keyed by `(session_id, k)`, at most one per key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GradeBook {
    records: BTreeMap<(String, usize), GradeRecord>,
}

impl GradeBook {
    pub fn get(&self, session_id: &str, k: usize) -> Option<&GradeRecord> {
        self.records.get(&(session_id.to_string(), k))
    }

    pub fn grade(&self, session_id: &str, k: usize) -> Grade {
        self.get(session_id, k).map(|r| r.grade).unwrap_or(Grade::Ungraded)
    }

    pub fn records(&self) -> impl Iterator<Item = &GradeRecord> {
        self.records.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Inserts unless it would replace a human grade with an auto grade.
    /// Returns whether the book changed.
    pub fn insert(&mut self, record: GradeRecord) -> bool {
        let key = (record.session_id.clone(), record.k);
        match self.records.get(&key) {
            Some(existing) if existing.grader == Grader::Human && record.grader == Grader::Auto => false,
            Some(existing) if *existing == record => false,
            _ => {
                self.records.insert(key, record);
                true
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self, EvaluationError> {
        let mut book = GradeBook::default();
        if !path.exists() {
            return Ok(book);
        }
        for r in read_jsonl::<GradeRecord>(path)? {
            book.records.insert((r.session_id.clone(), r.k), r);
        }
        Ok(book)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvaluationError> {
        let mut text = String::new();
        for r in self.records.values() {
            text.push_str(&serde_json::to_string(r).expect("grade records serialize"));
            text.push('\n');
        }
        write_atomic(path, &text).map_err(|e| EvaluationError::io(path, e))
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvaluationError> {
    let text = fs::read_to_string(path).map_err(|e| EvaluationError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                EvaluationError::malformed(format!("{}:{}", path.display(), i + 1), e)
            })
        })
        .collect()
}

/// Everything a report needs from one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub root: PathBuf,
    pub label: String,
    pub manifest: RunManifest,
    pub sessions: Vec<SessionSummary>,
    pub turns: Vec<TurnLine>,
    pub grades: GradeBook,
}

impl RunData {
    pub fn turn(&self, session_id: &str, k: usize) -> Option<&TurnLine> {
        self.turns
            .iter()
            .find(|t| t.session_id == session_id && t.record.k == k)
    }

    pub fn gold_for(&self, session_id: &str) -> Vec<String> {
        self.sessions
            .iter()
            .find(|s| s.session_id == session_id)
            .map(|s| s.gold_answers.clone())
            .unwrap_or_default()
    }
}

pub fn load_run(root: &Path) -> Result<RunData, EvaluationError> {
    let manifest_path = root.join(MANIFEST_FILE);
    let manifest: RunManifest = serde_json::from_str(
        &fs::read_to_string(&manifest_path).map_err(|e| EvaluationError::io(&manifest_path, e))?,
    )
    .map_err(|e| EvaluationError::malformed(manifest_path.display().to_string(), e))?;
    let optional = |name: &str| {
        let p = root.join(name);
        if p.exists() {
            Some(p)
        } else {
            None
        }
    };
    let sessions = match optional(SESSIONS_FILE) {
        Some(p) => read_jsonl(&p)?,
        None => Vec::new(),
    };
    let turns = match optional(TURNS_FILE) {
        Some(p) => read_jsonl(&p)?,
        None => Vec::new(),
    };
    Ok(RunData {
        root: root.to_path_buf(),
        label: manifest.label(),
        manifest,
        sessions,
        turns,
        grades: GradeBook::load(&root.join(GRADES_FILE))?,
    })
}

/// CSV with one row per completed turn. The grade column carries the
/// current human grade, if any.
pub fn export_grades(run: &RunData) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SHEET_HEADER).expect("writing to memory");
    for t in &run.turns {
        let human = run
            .grades
            .get(&t.session_id, t.record.k)
            .filter(|g| g.grader == Grader::Human)
            .map(|g| g.grade.to_string())
            .unwrap_or_default();
        w.write_record([
            t.session_id.as_str(),
            &t.record.k.to_string(),
            t.record.candidate(),
            &run.gold_for(&t.session_id).join("|"),
            &human,
        ])
        .expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportSummary {
    pub rows: usize,
    pub recorded: usize,
    pub unchanged: usize,
    pub skipped_ungraded: usize,
}

struct ImportLock(PathBuf);

impl ImportLock {
    fn acquire(root: &Path) -> Result<Self, EvaluationError> {
        let path = root.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => {
                    EvaluationError::Locked(root.display().to_string())
                }
                _ => EvaluationError::io(&path, e),
            })?;
        Ok(Self(path))
    }
}

impl Drop for ImportLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Records human grades from a sheet. Every row is validated before
/// anything is written, so a failed import leaves the run untouched.
pub fn import_grades(run: &mut RunData, sheet: &str) -> Result<ImportSummary, EvaluationError> {
    let _lock = ImportLock::acquire(&run.root)?;
    let known: BTreeSet<(&str, usize)> = run
        .turns
        .iter()
        .map(|t| (t.session_id.as_str(), t.record.k))
        .collect();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(sheet.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| EvaluationError::InvalidSheet { line: 1, reason: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != SHEET_HEADER {
        return Err(EvaluationError::InvalidSheet {
            line: 1,
            reason: format!("expected header {}", SHEET_HEADER.join(",")),
        });
    }

    let mut summary = ImportSummary::default();
    let mut incoming: BTreeMap<(String, usize), Grade> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| EvaluationError::InvalidSheet {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        summary.rows += 1;
        let session_id = row[0].to_string();
        let k: usize = row[1]
            .trim()
            .parse()
            .map_err(|_| EvaluationError::InvalidSheet { line, reason: format!("bad turn `{}`", &row[1]) })?;
        let grade: Grade = row[4]
            .parse()
            .map_err(|reason| EvaluationError::InvalidSheet { line, reason })?;
        if !known.contains(&(session_id.as_str(), k)) {
            return Err(EvaluationError::UnknownSessionId { session_id, k });
        }
        if grade == Grade::Ungraded {
            summary.skipped_ungraded += 1;
            continue;
        }
        if let Some(existing) = incoming.get(&(session_id.clone(), k)) {
            if *existing != grade {
                return Err(EvaluationError::DuplicateGradeConflict {
                    session_id,
                    k,
                    existing: *existing,
                    new: grade,
                });
            }
        }
        if let Some(existing) = run.grades.get(&session_id, k) {
            if existing.grader == Grader::Human && existing.grade != grade {
                return Err(EvaluationError::DuplicateGradeConflict {
                    session_id,
                    k,
                    existing: existing.grade,
                    new: grade,
                });
            }
        }
        incoming.insert((session_id, k), grade);
    }

    let mut book = run.grades.clone();
    for ((session_id, k), grade) in incoming {
        let candidate = run
            .turn(&session_id, k)
            .map(|t| t.record.candidate().to_string())
            .unwrap_or_default();
        let gold_answers = run.gold_for(&session_id);
        let changed = book.insert(GradeRecord {
            session_id,
            k,
            candidate_answer: candidate,
            gold_answers,
            grade,
            grader: Grader::Human,
        });
        if changed {
            summary.recorded += 1;
        } else {
            summary.unchanged += 1;
        }
    }
    if summary.recorded > 0 {
        book.save(&run.root.join(GRADES_FILE))?;
    }
    run.grades = book;
    Ok(summary)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AutoGradeSummary {
    pub graded: usize,
    pub agree: usize,
    pub kept_human: usize,
}

/// Grades every turn without a human grade using [`auto_agree`]. Clarify
/// turns have no candidate and grade as disagree.
pub fn auto_grade(run: &mut RunData) -> Result<AutoGradeSummary, EvaluationError> {
    let _lock = ImportLock::acquire(&run.root)?;
    let mut summary = AutoGradeSummary::default();
    let mut book = run.grades.clone();
    for t in &run.turns {
        let k = t.record.k;
        if matches!(book.get(&t.session_id, k), Some(g) if g.grader == Grader::Human) {
            summary.kept_human += 1;
            continue;
        }
        let gold = run.gold_for(&t.session_id);
        let agree = auto_agree(t.record.candidate(), &gold);
        book.insert(GradeRecord {
            session_id: t.session_id.clone(),
            k,
            candidate_answer: t.record.candidate().to_string(),
            gold_answers: gold,
            grade: if agree { Grade::Agree } else { Grade::Disagree },
            grader: Grader::Auto,
        });
        summary.graded += 1;
        summary.agree += usize::from(agree);
    }
    book.save(&run.root.join(GRADES_FILE))?;
    run.grades = book;
    Ok(summary)
}

/// Lowercases, removes punctuation and the articles a/an/the, and collapses
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// True when some gold answer, normalized, equals the normalized candidate
/// or occurs in it on word boundaries.
pub fn auto_agree(candidate: &str, gold_answers: &[String]) -> bool {
    let cand = normalize_answer(candidate);
    if cand.is_empty() {
        return false;
    }
    let cand_tokens: Vec<&str> = cand.split(' ').collect();
    gold_answers.iter().any(|g| {
        let g = normalize_answer(g);
        if g.is_empty() {
            return false;
        }
        if g == cand {
            return true;
        }
        let gold_tokens: Vec<&str> = g.split(' ').collect();
        cand_tokens
            .windows(gold_tokens.len())
            .any(|w| w == gold_tokens.as_slice())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn auto_agree_examples() {
        assert!(auto_agree(
            "John Powell scored the music for How to Train Your Dragon.",
            &gold(&["John Powell"])
        ));
        assert!(auto_agree("john  powell", &gold(&["John Powell"])));
        assert!(!auto_agree("Hans Zimmer", &gold(&["John Powell"])));
        assert!(!auto_agree("", &gold(&["John Powell"])));
        assert!(!auto_agree("anything", &gold(&["", "  "])));
        // Word boundaries: "Powell" alone is not "John Powell", and "art"
        // does not match inside "start".
        assert!(!auto_agree("Powell", &gold(&["John Powell"])));
        assert!(!auto_agree("the start", &gold(&["art"])));
        assert!(auto_agree("The Beatles!", &gold(&["beatles"])));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_answer("  The U.S.  Army, an  army "), "us army army");
    }

    #[test]
    fn human_grades_are_never_replaced_by_auto() {
        let mut book = GradeBook::default();
        let rec = |grade, grader| GradeRecord {
            session_id: "s".into(),
            k: 1,
            candidate_answer: String::new(),
            gold_answers: vec![],
            grade,
            grader,
        };
        assert!(book.insert(rec(Grade::Agree, Grader::Auto)));
        assert!(book.insert(rec(Grade::Disagree, Grader::Human)));
        assert!(!book.insert(rec(Grade::Agree, Grader::Auto)));
        assert_eq!(book.grade("s", 1), Grade::Disagree);
        assert_eq!(book.grade("s", 2), Grade::Ungraded);
    }

    #[test]
    fn grade_parsing() {
        assert_eq!("Agree".parse::<Grade>(), Ok(Grade::Agree));
        assert_eq!("".parse::<Grade>(), Ok(Grade::Ungraded));
        assert!("maybe".parse::<Grade>().is_err());
    }
}
