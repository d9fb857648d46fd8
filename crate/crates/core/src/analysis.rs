//! Post-hoc metrics over finished runs: text overlap between rounds,
//! calibration, tool usage, and disagreement counts.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::EvalRow;
use crate::gateway::TokenTotals;
use crate::parallel;
use crate::text::tokenize;
use crate::transcript::{EventBody, StageTag, Transcript};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapMetrics {
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub jaccard: f64,
    /// Both inputs had no tokens; every metric is 0 by definition.
    pub empty_input: bool,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn f1(overlap: usize, a: usize, b: usize) -> f64 {
    if overlap == 0 || a == 0 || b == 0 {
        return 0.0;
    }
    let p = overlap as f64 / a as f64;
    let r = overlap as f64 / b as f64;
    2.0 * p * r / (p + r)
}

/// ROUGE-N F1 over clipped n-gram counts.
fn rouge_n(a: &[String], b: &[String], n: usize) -> f64 {
    let (ga, gb) = (ngrams(a, n), ngrams(b, n));
    let (ta, tb) = (ga.values().sum(), gb.values().sum());
    if ta == 0 && tb == 0 {
        // too short for any n-gram: equal sequences still overlap fully
        return if a == b && !a.is_empty() { 1.0 } else { 0.0 };
    }
    let overlap = ga.iter().map(|(g, &c)| c.min(gb.get(g).copied().unwrap_or(0))).sum();
    f1(overlap, ta, tb)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Lexical overlap between two texts after lowercasing, punctuation removal
/// and whitespace splitting. ROUGE scores are F1.
pub fn compute_overlap(before: &str, after: &str) -> OverlapMetrics {
    let a = tokenize(before);
    let b = tokenize(after);
    if a.is_empty() && b.is_empty() {
        return OverlapMetrics { empty_input: true, ..OverlapMetrics::default() };
    }
    let sa: HashSet<&String> = a.iter().collect();
    let sb: HashSet<&String> = b.iter().collect();
    let union = sa.union(&sb).count();
    OverlapMetrics {
        rouge1: rouge_n(&a, &b, 1),
        rouge2: rouge_n(&a, &b, 2),
        rouge_l: f1(lcs_len(&a, &b), a.len(), b.len()),
        jaccard: sa.intersection(&sb).count() as f64 / union as f64,
        empty_input: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub confidence: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationInput {
    pub records: Vec<CalibrationRecord>,
    pub bin_count: usize,
}

pub const DEFAULT_ECE_BINS: usize = 10;

impl CalibrationInput {
    pub fn new(records: impl IntoIterator<Item = (f64, bool)>) -> Self {
        Self {
            records: records.into_iter().map(|(confidence, correct)| CalibrationRecord { confidence, correct }).collect(),
            bin_count: DEFAULT_ECE_BINS,
        }
    }

    pub fn with_bins(mut self, bins: usize) -> Self {
        self.bin_count = bins;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalibrationError {
    #[error("no calibration records")]
    Empty,
    #[error("bin count must be at least 1")]
    NoBins,
    #[error("confidence {0} lies outside [0, 1]")]
    OutOfRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

/// Equal-width bins over [0, 1]; confidence `c` lands in bin
/// `min(floor(c * B), B - 1)`. Empty bins report zeros.
pub fn calibration_bins(input: &CalibrationInput) -> Result<Vec<CalibrationBin>, CalibrationError> {
    let b = input.bin_count;
    if b == 0 {
        return Err(CalibrationError::NoBins);
    }
    if input.records.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); b];
    for r in &input.records {
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(CalibrationError::OutOfRange(r.confidence.to_string()));
        }
        let idx = ((r.confidence * b as f64).floor() as usize).min(b - 1);
        sums[idx].0 += 1;
        sums[idx].1 += r.confidence;
        sums[idx].2 += r.correct as usize;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (count, conf, correct))| CalibrationBin {
            lower: i as f64 / b as f64,
            upper: (i + 1) as f64 / b as f64,
            count,
            mean_confidence: if count == 0 { 0.0 } else { conf / count as f64 },
            accuracy: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
        })
        .collect())
}

/// Expected calibration error: Σ_b (|b| / N) · |acc(b) − conf(b)|.
pub fn compute_ece(input: &CalibrationInput) -> Result<f64, CalibrationError> {
    let bins = calibration_bins(input)?;
    let n = input.records.len() as f64;
    Ok(bins.iter().map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs()).sum())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolDistribution {
    /// Tool name → number of executed calls.
    pub counts: BTreeMap<String, usize>,
    /// Tool name → share of tool-calling questions that used it.
    pub question_fraction: BTreeMap<String, f64>,
    pub total_calls: usize,
    pub questions_with_tool_calls: usize,
}

/// Count executed tool calls over transcripts.
pub fn tool_distribution(transcripts: &[Transcript]) -> ToolDistribution {
    let mut d = ToolDistribution::default();
    let mut users: BTreeMap<String, usize> = BTreeMap::new();
    for t in transcripts {
        let mut used = BTreeSet::new();
        for e in &t.events {
            if let EventBody::ToolCall { tool_name, .. } = &e.body {
                *d.counts.entry(tool_name.clone()).or_default() += 1;
                d.total_calls += 1;
                used.insert(tool_name.clone());
            }
        }
        if !used.is_empty() {
            d.questions_with_tool_calls += 1;
        }
        for u in used {
            *users.entry(u).or_default() += 1;
        }
    }
    d.question_fraction =
        users.into_iter().map(|(k, v)| (k, v as f64 / d.questions_with_tool_calls as f64)).collect();
    d
}

/// Disagreements of one question: invocations across its tool plans.
pub fn disagreement_count(transcript: &Transcript) -> usize {
    transcript.plans().iter().map(|p| p.len()).sum()
}

/// Mean disagreements per question; `None` for no transcripts.
pub fn disagreement_rate(transcripts: &[Transcript]) -> Option<f64> {
    if transcripts.is_empty() {
        return None;
    }
    let total: usize = transcripts.iter().map(disagreement_count).sum();
    Some(total as f64 / transcripts.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOverlap {
    pub question_id: String,
    pub agent_id: String,
    pub metrics: OverlapMetrics,
}

/// Last accepted reply of each agent in `round` and `stage`, by agent id.
fn agent_replies(t: &Transcript, round: usize, stage: StageTag) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for e in &t.events {
        if e.round != round || e.stage != stage {
            continue;
        }
        if let EventBody::Response { agent_id: Some(a), text, .. } = &e.body {
            out.insert(a.clone(), text.clone());
        }
    }
    out
}

/// Overlap between each agent's initial reply and its reply after the first
/// discussion round. With `append_tools`, the round's evidence texts are
/// appended to the initial reply before tokenization.
pub fn round_overlaps(t: &Transcript, append_tools: bool) -> Vec<AgentOverlap> {
    let before = agent_replies(t, 0, StageTag::Initial);
    let after = agent_replies(t, 1, StageTag::Discuss);
    let evidence: Vec<&str> = t
        .events
        .iter()
        .filter(|e| e.round == 1)
        .filter_map(|e| match &e.body {
            EventBody::ToolCall { evidence, succeeded: true, .. } => Some(evidence.as_str()),
            _ => None,
        })
        .collect();
    before
        .iter()
        .filter_map(|(agent, b)| {
            let a = after.get(agent)?;
            let mut b = b.clone();
            if append_tools {
                for ev in &evidence {
                    b.push(' ');
                    b.push_str(ev);
                }
            }
            Some(AgentOverlap { question_id: t.question_id.clone(), agent_id: agent.clone(), metrics: compute_overlap(&b, a) })
        })
        .collect()
}

pub fn mean_overlap(rows: &[AgentOverlap]) -> Option<OverlapMetrics> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let sum = |f: fn(&OverlapMetrics) -> f64| rows.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    Some(OverlapMetrics {
        rouge1: sum(|m| m.rouge1),
        rouge2: sum(|m| m.rouge2),
        rouge_l: sum(|m| m.rouge_l),
        jaccard: sum(|m| m.jaccard),
        empty_input: false,
    })
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> AnalysisError + '_ {
    move |source| AnalysisError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub questions: usize,
    pub tool_distribution: ToolDistribution,
    pub disagreement_rate: Option<f64>,
    pub mean_overlap: Option<OverlapMetrics>,
    pub mean_overlap_with_tools: Option<OverlapMetrics>,
    /// From report rows when present; a row counts as correct iff its score is 1.
    pub ece: Option<f64>,
    pub tokens: Option<TokenTotals>,
}

/// Transcript files under `dir`, sorted by path. A run directory (one that
/// has a `transcripts/` child) is searched there.
pub fn transcript_paths(dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    let sub = dir.join("transcripts");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
        let p = entry.map_err(io_err(&dir))?.path();
        if p.extension().is_some_and(|e| e == "jsonl") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn read_rows(dir: &Path) -> Result<Vec<EvalRow>, AnalysisError> {
    let path = dir.join("reports").join("rows.jsonl");
    if !path.exists() {
        return Ok(vec![]);
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect())
}

/// Analyze transcripts (and report rows, if any) of the given run or
/// transcript directories, writing `summary.json` and CSV tables to `out_dir`.
pub fn analyze_dirs(dirs: &[PathBuf], out_dir: &Path) -> Result<AnalysisSummary, AnalysisError> {
    let mut paths = Vec::new();
    let mut rows = Vec::new();
    for d in dirs {
        paths.extend(transcript_paths(d)?);
        rows.extend(read_rows(d)?);
    }
    let loaded: Vec<Result<Transcript, AnalysisError>> =
        parallel::map(&paths, |_, p| Transcript::read(p).map_err(io_err(p)));
    let transcripts = loaded.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = summarize(&transcripts, &rows);

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let summary_path = out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, json + "\n").map_err(io_err(&summary_path))?;

    let mut w = csv::Writer::from_path(out_dir.join("tool_distribution.csv"))?;
    w.write_record(["tool", "calls", "question_fraction"])?;
    for (tool, n) in &summary.tool_distribution.counts {
        let frac = summary.tool_distribution.question_fraction.get(tool).copied().unwrap_or(0.0);
        w.write_record([tool.clone(), n.to_string(), frac.to_string()])?;
    }
    w.flush().map_err(io_err(out_dir))?;

    let mut w = csv::Writer::from_path(out_dir.join("overlap.csv"))?;
    w.write_record(["question_id", "agent_id", "rouge1", "rouge2", "rouge_l", "jaccard", "with_tools"])?;
    for with_tools in [false, true] {
        for t in &transcripts {
            for o in round_overlaps(t, with_tools) {
                let m = o.metrics;
                w.write_record([
                    o.question_id,
                    o.agent_id,
                    m.rouge1.to_string(),
                    m.rouge2.to_string(),
                    m.rouge_l.to_string(),
                    m.jaccard.to_string(),
                    with_tools.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(io_err(out_dir))?;

    let mut w = csv::Writer::from_path(out_dir.join("disagreements.csv"))?;
    w.write_record(["question_id", "disagreements"])?;
    for t in &transcripts {
        w.write_record([t.question_id.clone(), disagreement_count(t).to_string()])?;
    }
    w.flush().map_err(io_err(out_dir))?;

    if !rows.is_empty() {
        let input = CalibrationInput::new(rows.iter().map(|r| (r.confidence.clamp(0.0, 1.0), r.score == 1.0)));
        if let Ok(bins) = calibration_bins(&input) {
            let mut w = csv::Writer::from_path(out_dir.join("calibration.csv"))?;
            w.write_record(["lower", "upper", "count", "mean_confidence", "accuracy"])?;
            for b in bins {
                w.write_record([
                    b.lower.to_string(),
                    b.upper.to_string(),
                    b.count.to_string(),
                    b.mean_confidence.to_string(),
                    b.accuracy.to_string(),
                ])?;
            }
            w.flush().map_err(io_err(out_dir))?;
        }
    }
    Ok(summary)
}

pub fn summarize(transcripts: &[Transcript], rows: &[EvalRow]) -> AnalysisSummary {
    let overlaps: Vec<AgentOverlap> = transcripts.iter().flat_map(|t| round_overlaps(t, false)).collect();
    let with_tools: Vec<AgentOverlap> = transcripts.iter().flat_map(|t| round_overlaps(t, true)).collect();
    let ece = (!rows.is_empty())
        .then(|| compute_ece(&CalibrationInput::new(rows.iter().map(|r| (r.confidence.clamp(0.0, 1.0), r.score == 1.0)))).ok())
        .flatten();
    let tokens = (!rows.is_empty()).then(|| {
        let mut t = TokenTotals::default();
        for r in rows {
            t.merge(&r.tokens);
        }
        t
    });
    AnalysisSummary {
        questions: transcripts.len(),
        tool_distribution: tool_distribution(transcripts),
        disagreement_rate: disagreement_rate(transcripts),
        mean_overlap: mean_overlap(&overlaps),
        mean_overlap_with_tools: mean_overlap(&with_tools),
        ece,
        tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recruitment::{ToolInvocation, ToolPlan};
    use proptest::prelude::*;

    #[test]
    fn identical_and_disjoint() {
        let m = compute_overlap("The cat sat.", "the cat sat");
        assert_eq!((m.rouge1, m.rouge2, m.rouge_l, m.jaccard), (1.0, 1.0, 1.0, 1.0));
        let m = compute_overlap("word", "Word!");
        assert_eq!((m.rouge1, m.rouge2, m.rouge_l, m.jaccard), (1.0, 1.0, 1.0, 1.0));
        let m = compute_overlap("red car", "blue boat");
        assert_eq!((m.rouge1, m.rouge2, m.rouge_l, m.jaccard), (0.0, 0.0, 0.0, 0.0));
        let m = compute_overlap("", "  ");
        assert!(m.empty_input);
        assert_eq!(m.rouge1, 0.0);
    }

    #[test]
    fn partial_overlap_by_hand() {
        // a = [a b c d], b = [a c d e]; LCS = a c d
        let m = compute_overlap("a b c d", "a c d e");
        assert!((m.rouge_l - 0.75).abs() < 1e-12);
        assert!((m.rouge1 - 0.75).abs() < 1e-12);
        // bigrams: {ab, bc, cd} vs {ac, cd, de}: one shared
        assert!((m.rouge2 - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.jaccard - 3.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn ece_examples() {
        let ece = |r: Vec<(f64, bool)>| compute_ece(&CalibrationInput::new(r)).unwrap();
        assert_eq!(ece(vec![(1.0, true); 4]), 0.0);
        assert_eq!(ece(vec![(1.0, false); 4]), 1.0);
        assert!((ece(vec![(0.8, true), (0.8, false)]) - 0.3).abs() < 1e-12);
        assert_eq!(compute_ece(&CalibrationInput::new(vec![])), Err(CalibrationError::Empty));
        assert!(compute_ece(&CalibrationInput::new(vec![(1.5, true)])).is_err());
    }

    fn transcript(id: &str, tools: &[&str], plan_size: Option<usize>) -> Transcript {
        let mut t = Transcript::new(id);
        if let Some(n) = plan_size {
            let inv = ToolInvocation { tool_name: "x".into(), disagreement: String::new(), justification: String::new(), arguments: vec![] };
            t.push(1, StageTag::Recruit, EventBody::Plan { unanimous: false, plan: ToolPlan { invocations: vec![inv; n] }, warnings: vec![] });
        }
        for tool in tools {
            t.push(1, StageTag::Tool, EventBody::ToolCall { tool_name: tool.to_string(), arguments: vec![], succeeded: true, evidence: "e".into(), error: None });
        }
        t
    }

    #[test]
    fn tool_counts() {
        let d = tool_distribution(&[transcript("1", &["grounder"], Some(1)), transcript("2", &[], None)]);
        assert_eq!(d.counts["grounder"], 1);
        assert_eq!(d.total_calls, 1);
        assert_eq!(d.question_fraction["grounder"], 1.0);
        assert_eq!(tool_distribution(&[]), ToolDistribution::default());
    }

    #[test]
    fn disagreement_means() {
        let ts = [transcript("1", &[], Some(3)), transcript("2", &[], None), transcript("3", &[], Some(1))];
        assert_eq!(disagreement_rate(&ts), Some(4.0 / 3.0));
        assert_eq!(disagreement_rate(&[transcript("1", &[], None)]), Some(0.0));
        assert_eq!(disagreement_rate(&[]), None);
    }

    #[test]
    fn overlaps_from_transcript() {
        let mut t = Transcript::new("q");
        let resp = |agent: &str, text: &str| EventBody::Response { endpoint_id: "e".into(), agent_id: Some(agent.into()), text: text.into() };
        t.push(0, StageTag::Initial, resp("a", "Answer: left"));
        t.push(1, StageTag::Tool, EventBody::ToolCall { tool_name: "spatial".into(), arguments: vec![], succeeded: true, evidence: "points left".into(), error: None });
        t.push(1, StageTag::Discuss, resp("a", "Answer: left"));
        let o = round_overlaps(&t, false);
        assert_eq!(o.len(), 1);
        assert_eq!(o[0].metrics.rouge1, 1.0);
        let o = round_overlaps(&t, true);
        assert!(o[0].metrics.rouge1 < 1.0);
    }

    proptest! {
        #[test]
        fn overlap_is_symmetric_and_bounded(a in "[abc ]{0,30}", b in "[abc ]{0,30}") {
            let x = compute_overlap(&a, &b);
            let y = compute_overlap(&b, &a);
            prop_assert_eq!(x, y);
            for v in [x.rouge1, x.rouge2, x.rouge_l, x.jaccard] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn ece_permutation_and_duplication(recs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..40), shift in 0usize..40) {
            let base = compute_ece(&CalibrationInput::new(recs.clone())).unwrap();
            let mut rotated = recs.clone();
            let k = shift % rotated.len();
            rotated.rotate_left(k);
            prop_assert!((compute_ece(&CalibrationInput::new(rotated)).unwrap() - base).abs() < 1e-12);
            let doubled: Vec<_> = recs.iter().chain(recs.iter()).copied().collect();
            prop_assert!((compute_ece(&CalibrationInput::new(doubled)).unwrap() - base).abs() < 1e-12);
        }
    }
}
