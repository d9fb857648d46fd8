//! JSONL transcript of a pipeline run and replay support.
//!
//! Each event is one line. Events never carry wall-clock data, so a run
//! against deterministic backends always serializes to the same bytes.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationMethod;
use crate::exchange::CallRecord;
use crate::gateway::{FailureKind, MockEntry};
use crate::recruitment::ToolPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    Initial,
    Recruit,
    Tool,
    Score,
    Discuss,
    Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventBody {
    Prompt {
        endpoint_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent_id: Option<String>,
        text: String,
        image: bool,
    },
    Failure {
        endpoint_id: String,
        failure: FailureKind,
        detail: String,
    },
    Response {
        endpoint_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent_id: Option<String>,
        text: String,
    },
    CallFailed {
        endpoint_id: String,
        error: String,
    },
    /// A parse fallback or other degradation.
    Fallback {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        agent_id: Option<String>,
        detail: String,
    },
    Answer {
        agent_id: String,
        answer: String,
        confidence: f64,
    },
    Plan {
        unanimous: bool,
        plan: ToolPlan,
        warnings: Vec<String>,
    },
    ToolCall {
        tool_name: String,
        arguments: Vec<String>,
        succeeded: bool,
        evidence: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Scores {
        matrix: Vec<Vec<u8>>,
        means: Vec<f64>,
    },
    Skip {
        reason: String,
    },
    Final {
        answer: String,
        confidence: f64,
        method: AggregationMethod,
        off_menu: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvent {
    pub seq: usize,
    pub question_id: String,
    pub round: usize,
    pub stage: StageTag,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub question_id: String,
    pub events: Vec<TranscriptEvent>,
}

impl Transcript {
    pub fn new(question_id: impl Into<String>) -> Self {
        Self { question_id: question_id.into(), events: Vec::new() }
    }

    pub fn push(&mut self, round: usize, stage: StageTag, body: EventBody) {
        self.events.push(TranscriptEvent {
            seq: self.events.len(),
            question_id: self.question_id.clone(),
            round,
            stage,
            body,
        });
    }

    /// Append the events of one gateway call: prompt, failed attempts, and
    /// the response or the final error.
    pub fn push_call(&mut self, round: usize, stage: StageTag, agent_id: Option<&str>, call: &CallRecord) {
        let agent_id = agent_id.map(str::to_string);
        self.push(
            round,
            stage,
            EventBody::Prompt {
                endpoint_id: call.endpoint_id.clone(),
                agent_id: agent_id.clone(),
                text: call.prompt.clone(),
                image: call.has_image,
            },
        );
        for f in &call.failed_attempts {
            self.push(
                round,
                stage,
                EventBody::Failure { endpoint_id: call.endpoint_id.clone(), failure: f.kind, detail: f.detail.clone() },
            );
        }
        match &call.reply {
            Ok(r) => self.push(
                round,
                stage,
                EventBody::Response { endpoint_id: call.endpoint_id.clone(), agent_id, text: r.text.clone() },
            ),
            Err(e) => self.push(
                round,
                stage,
                EventBody::CallFailed { endpoint_id: call.endpoint_id.clone(), error: e.to_string() },
            ),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut events = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            events.push(serde_json::from_str::<TranscriptEvent>(line)?);
        }
        let question_id = events.first().map(|e| e.question_id.clone()).unwrap_or_default();
        Ok(Self { question_id, events })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut text = String::new();
        for line in std::io::BufReader::new(file).lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_jsonl(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// Endpoints that received at least one prompt.
    pub fn contacted_endpoints(&self) -> std::collections::BTreeSet<String> {
        self.events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::Prompt { endpoint_id, .. } => Some(endpoint_id.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn count_stage_prompts(&self, stage: StageTag) -> usize {
        self.events.iter().filter(|e| e.stage == stage && matches!(e.body, EventBody::Prompt { .. })).count()
    }

    /// Validated tool plans, in order.
    pub fn plans(&self) -> Vec<&ToolPlan> {
        self.events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::Plan { plan, .. } => Some(plan),
                _ => None,
            })
            .collect()
    }
}

/// Mock scripts that make a rerun reproduce `transcript`: per endpoint, every
/// failed attempt and every response in event order.
pub fn replay_scripts(transcript: &Transcript) -> BTreeMap<String, Vec<MockEntry>> {
    let mut scripts: BTreeMap<String, Vec<MockEntry>> = BTreeMap::new();
    for e in &transcript.events {
        match &e.body {
            EventBody::Response { endpoint_id, text, .. } => {
                scripts.entry(endpoint_id.clone()).or_default().push(MockEntry::Reply(text.clone()));
            }
            EventBody::Failure { endpoint_id, failure, .. } => {
                scripts.entry(endpoint_id.clone()).or_default().push(MockEntry::Failure { fail: *failure });
            }
            _ => {}
        }
    }
    scripts
}
