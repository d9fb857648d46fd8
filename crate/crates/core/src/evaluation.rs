//! Datasets, answer scoring, and resumable batch evaluation.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::AggregationMethod;
use crate::debate::{Orchestrator, PipelineError};
use crate::gateway::{ImagePayload, TokenTotals};
use crate::parallel;
use crate::text::{normalize_answer, normalize_direct_answer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    MultipleChoice,
    DirectAnswer,
}

/// Gold label: a choice index or the annotators' reference answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Choice(usize),
    References(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub question_id: String,
    pub question: String,
    /// Path relative to the dataset file, or an http(s) URL.
    pub image: String,
    pub kind: ExampleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub gold: Gold,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl Example {
    fn validate(&self) -> Result<(), String> {
        if self.question_id.trim().is_empty() {
            return Err("empty question_id".into());
        }
        match (self.kind, &self.gold, &self.choices) {
            (ExampleKind::MultipleChoice, Gold::Choice(i), Some(c)) if *i < c.len() => Ok(()),
            (ExampleKind::MultipleChoice, Gold::Choice(i), Some(c)) => {
                Err(format!("gold index {i} out of range for {} choices", c.len()))
            }
            (ExampleKind::MultipleChoice, _, None) => Err("multiple_choice record needs choices".into()),
            (ExampleKind::MultipleChoice, Gold::References(_), _) => Err("multiple_choice gold must be an index".into()),
            (ExampleKind::DirectAnswer, Gold::References(r), _) if !r.is_empty() => Ok(()),
            (ExampleKind::DirectAnswer, Gold::References(_), _) => Err("direct_answer gold list is empty".into()),
            (ExampleKind::DirectAnswer, Gold::Choice(_), _) => Err("direct_answer gold must be a list".into()),
        }
    }

    /// Question text as shown to agents; choices are appended as lettered options.
    pub fn prompt_text(&self) -> String {
        match &self.choices {
            Some(choices) if self.kind == ExampleKind::MultipleChoice => {
                let mut s = self.question.clone();
                for (i, c) in choices.iter().enumerate() {
                    s.push_str(&format!("\nOption {}: {c}", choice_letter(i)));
                }
                s
            }
            _ => self.question.clone(),
        }
    }

    /// Score a prediction; the flag marks an unparseable multiple-choice answer.
    pub fn score(&self, prediction: &str) -> (f64, bool) {
        match (&self.kind, &self.gold) {
            (ExampleKind::MultipleChoice, _) => {
                let s = score_multiple_choice(prediction, self);
                (s.score, s.unparsed_choice)
            }
            (ExampleKind::DirectAnswer, Gold::References(r)) => (score_direct_answer(prediction, r), false),
            (ExampleKind::DirectAnswer, Gold::Choice(_)) => (0.0, false),
        }
    }
}

fn choice_letter(i: usize) -> char {
    (b'A' + (i % 26) as u8) as char
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset line {line}: {reason}")]
    RecordValidationError { line: usize, reason: String },
}

/// Parse JSONL records; blank lines are skipped, line numbers start at 1.
pub fn parse_dataset(text: &str) -> Result<Vec<Example>, DatasetError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| DatasetError::RecordValidationError { line: idx + 1, reason };
        let ex: Example = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        ex.validate().map_err(bad)?;
        if !ids.insert(ex.question_id.clone()) {
            return Err(bad(format!("duplicate question_id `{}`", ex.question_id)));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Example>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChoiceScore {
    pub score: f64,
    pub matched: Option<usize>,
    pub unparsed_choice: bool,
}

/// Choice index named by a letter: "b", "(b)", "b)", "b.", "b:", "option b",
/// optionally followed by more text.
fn parse_letter(s: &str, n_choices: usize) -> Option<usize> {
    let s = s.strip_prefix("option").map(str::trim_start).unwrap_or(s);
    let s = s.strip_prefix('(').unwrap_or(s);
    let mut chars = s.chars();
    let c = chars.next()?;
    let rest = chars.as_str();
    let separated = rest.is_empty() || rest.starts_with([')', '.', ':']);
    if !c.is_ascii_lowercase() || !separated {
        return None;
    }
    let idx = (c as u8 - b'a') as usize;
    (idx < n_choices).then_some(idx)
}

/// Match a prediction to a choice by full text or by letter; score 1 iff it
/// is the gold choice. Unmatched predictions score 0 and are flagged.
pub fn score_multiple_choice(prediction: &str, example: &Example) -> ChoiceScore {
    let choices = example.choices.as_deref().unwrap_or(&[]);
    let p = normalize_answer(prediction);
    let matched = choices
        .iter()
        .position(|c| normalize_answer(c) == p)
        .or_else(|| parse_letter(&p, choices.len()))
        .or_else(|| {
            // "option b: text" style where the text names the choice
            let (_, tail) = p.split_once(':')?;
            let tail = normalize_answer(tail.trim());
            choices.iter().position(|c| normalize_answer(c) == tail)
        });
    let gold = match example.gold {
        Gold::Choice(i) => Some(i),
        Gold::References(_) => None,
    };
    ChoiceScore {
        score: if matched.is_some() && matched == gold { 1.0 } else { 0.0 },
        matched,
        unparsed_choice: matched.is_none(),
    }
}

/// min(1, matches / 3) where matches counts references equal to the
/// prediction after normalization and article removal.
pub fn score_direct_answer(prediction: &str, references: &[String]) -> f64 {
    let p = normalize_direct_answer(prediction);
    let matches = references.iter().filter(|r| normalize_direct_answer(r) == p).count();
    (matches as f64 / 3.0).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub question_id: String,
    pub prediction: String,
    pub score: f64,
    pub unparsed_choice: bool,
    pub confidence: f64,
    pub method: AggregationMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub tokens: TokenTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Sorted by question id.
    pub rows: Vec<EvalRow>,
    /// Mean score; `None` for an empty run.
    pub accuracy: Option<f64>,
    pub per_category: BTreeMap<String, CategoryStats>,
    pub tokens: TokenTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub examples: usize,
    pub accuracy: Option<f64>,
    pub per_category: BTreeMap<String, CategoryStats>,
    pub tokens: TokenTotals,
}

impl EvalReport {
    pub fn from_rows(mut rows: Vec<EvalRow>) -> Self {
        rows.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let accuracy = (!scores.is_empty()).then(|| mean(&scores));
        let mut by_cat: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            if let Some(c) = &r.category {
                by_cat.entry(c.clone()).or_default().push(r.score);
            }
        }
        let per_category =
            by_cat.into_iter().map(|(k, v)| (k, CategoryStats { count: v.len(), accuracy: mean(&v) })).collect();
        let mut tokens = TokenTotals::default();
        for r in &rows {
            tokens.merge(&r.tokens);
        }
        Self { rows, accuracy, per_category, tokens }
    }

    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            examples: self.rows.len(),
            accuracy: self.accuracy,
            per_category: self.per_category.clone(),
            tokens: self.tokens,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("evaluation stopped after {completed} completed questions: {source}")]
    Aborted {
        completed: usize,
        #[source]
        source: PipelineError,
        /// Report over everything completed so far, also written to disk.
        partial: Box<EvalReport>,
    },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io { path: path.display().to_string(), source }
}

/// File name for a question's transcript.
pub fn transcript_file_name(question_id: &str) -> String {
    let safe: String = question_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{safe}.jsonl")
}

/// Layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn transcripts(&self) -> PathBuf {
        self.root.join("transcripts")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint_file(&self) -> PathBuf {
        self.checkpoints().join("completed.jsonl")
    }

    pub fn rows_file(&self) -> PathBuf {
        self.reports().join("rows.jsonl")
    }

    pub fn summary_file(&self) -> PathBuf {
        self.reports().join("summary.json")
    }

    pub fn create(&self) -> Result<(), EvalError> {
        for d in [self.transcripts(), self.reports(), self.checkpoints()] {
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    question_id: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, EvalError> {
    if !path.exists() {
        return Ok(vec![]);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    // a torn final line from an interrupted write is ignored
    Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
}

struct Appender {
    rows: BufWriter<File>,
    checkpoint: BufWriter<File>,
}

impl Appender {
    fn open(run: &RunDir) -> Result<Self, EvalError> {
        let open = |p: PathBuf| -> Result<BufWriter<File>, EvalError> {
            let f = OpenOptions::new().create(true).append(true).open(&p).map_err(io_err(&p))?;
            Ok(BufWriter::new(f))
        };
        Ok(Self { rows: open(run.rows_file())?, checkpoint: open(run.checkpoint_file())? })
    }

    /// The row is durable before its checkpoint line.
    fn append(&mut self, run: &RunDir, row: &EvalRow) -> Result<(), EvalError> {
        let rows_path = run.rows_file();
        let cp_path = run.checkpoint_file();
        let line = serde_json::to_string(row).expect("rows serialize");
        writeln!(self.rows, "{line}").and_then(|_| self.rows.flush()).map_err(io_err(&rows_path))?;
        let cp = serde_json::to_string(&CheckpointLine { question_id: row.question_id.clone() }).expect("serializes");
        writeln!(self.checkpoint, "{cp}").and_then(|_| self.checkpoint.flush()).map_err(io_err(&cp_path))
    }
}

fn write_report(run: &RunDir, report: &EvalReport) -> Result<(), EvalError> {
    let rows_path = run.rows_file();
    let mut text = String::new();
    for r in &report.rows {
        text.push_str(&serde_json::to_string(r).expect("rows serialize"));
        text.push('\n');
    }
    fs::write(&rows_path, text).map_err(io_err(&rows_path))?;
    let summary_path = run.summary_file();
    let summary = serde_json::to_string_pretty(&report.summary()).expect("summary serializes");
    fs::write(&summary_path, summary + "\n").map_err(io_err(&summary_path))
}

/// Run every example not yet checkpointed in `run`, up to `workers` at a
/// time, and write rows, transcripts and a summary. Images resolve against
/// `image_base`. On an aborted question no new questions start; finished
/// ones stay checkpointed and a partial report is written.
pub fn run_eval(
    orch: &Orchestrator,
    dataset: &[Example],
    image_base: &Path,
    run: &RunDir,
    workers: usize,
) -> Result<EvalReport, EvalError> {
    run.create()?;
    let done: HashSet<String> =
        read_jsonl::<CheckpointLine>(&run.checkpoint_file())?.into_iter().map(|c| c.question_id).collect();
    let mut kept: BTreeMap<String, EvalRow> = BTreeMap::new();
    for r in read_jsonl::<EvalRow>(&run.rows_file())? {
        if done.contains(&r.question_id) {
            kept.insert(r.question_id.clone(), r);
        }
    }
    let pending: Vec<&Example> = dataset.iter().filter(|e| !kept.contains_key(&e.question_id)).collect();
    tracing::info!(total = dataset.len(), resumed = kept.len(), pending = pending.len(), "starting evaluation");

    let appender = Mutex::new(Appender::open(run)?);
    let stop = AtomicBool::new(false);
    let outcomes: Vec<Option<Result<EvalRow, EvalError>>> = parallel::with_workers(workers, || {
        parallel::map(&pending, |_, ex| {
            if stop.load(Ordering::SeqCst) {
                return None;
            }
            let out = eval_one(orch, ex, image_base, run).and_then(|row| {
                appender.lock().expect("appender poisoned").append(run, &row)?;
                Ok(row)
            });
            if out.is_err() {
                stop.store(true, Ordering::SeqCst);
            }
            Some(out)
        })
    });

    let mut first_error = None;
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(row) => {
                kept.insert(row.question_id.clone(), row);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let report = EvalReport::from_rows(kept.into_values().collect());
    write_report(run, &report)?;
    match first_error {
        None => Ok(report),
        Some(EvalError::Aborted { source, .. }) => {
            Err(EvalError::Aborted { completed: report.rows.len(), source, partial: Box::new(report) })
        }
        Some(e) => Err(e),
    }
}

fn eval_one(orch: &Orchestrator, ex: &Example, image_base: &Path, run: &RunDir) -> Result<EvalRow, EvalError> {
    let image = ImagePayload::load(&ex.image, image_base).map_err(io_err(&image_base.join(&ex.image)))?;
    let result = match orch.run_pipeline(&ex.question_id, &ex.prompt_text(), &image) {
        Ok(r) => r,
        Err(e) => {
            if let PipelineError::AbortedRun { transcript, .. } = &e {
                let path = run.transcripts().join(transcript_file_name(&ex.question_id));
                transcript.write(&path).map_err(io_err(&path))?;
            }
            tracing::error!(question = %ex.question_id, error = %e, "question aborted");
            return Err(EvalError::Aborted { completed: 0, source: e, partial: Box::new(EvalReport::from_rows(vec![])) });
        }
    };
    let path = run.transcripts().join(transcript_file_name(&ex.question_id));
    result.transcript.write(&path).map_err(io_err(&path))?;
    let (score, unparsed_choice) = ex.score(&result.final_answer.answer);
    Ok(EvalRow {
        question_id: ex.question_id.clone(),
        prediction: result.final_answer.answer.clone(),
        score,
        unparsed_choice,
        confidence: result.final_answer.confidence,
        method: result.final_answer.method,
        category: ex.category.clone(),
        tokens: result.token_totals,
    })
}
