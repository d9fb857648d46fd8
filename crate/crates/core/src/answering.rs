//! Initial answer generation, reply parsing, and answer grouping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::AgreementScores;
use crate::exchange::{ask_with_reprompt, CallRecord, ExchangeFailure, FORMAT_NUDGE};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, ImagePayload};
use crate::parallel;
use crate::prompts::{PromptSet, TemplateKind};
use crate::text::normalize_answer;

/// Confidence assumed when a reply carries none.
pub const DEFAULT_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentAnswer {
    pub agent_id: String,
    pub answer: String,
    pub reasoning: String,
    pub confidence: f64,
    pub raw_text: String,
    pub parse_fallback_used: bool,
}

impl AgentAnswer {
    pub fn normalized(&self) -> String {
        normalize_answer(&self.answer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOutput {
    pub answer: String,
    pub reasoning: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no `Answer:` label found")]
    MissingAnswer,
    #[error("the `Answer:` label is empty")]
    EmptyAnswer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Label {
    Answer,
    Reasoning,
    Confidence,
}

/// Recognize a line that opens a labeled block, returning the label and the
/// text after the colon. Markdown emphasis and list markers are tolerated.
fn label_of(line: &str) -> Option<(Label, &str)> {
    let t = line.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '#' | '>' | '-' | '_'));
    let (t, final_prefix) = match t.get(..6) {
        Some(p) if p.eq_ignore_ascii_case("final ") => (&t[6..], true),
        _ => (t, false),
    };
    for (word, label) in [("answer", Label::Answer), ("reasoning", Label::Reasoning), ("confidence", Label::Confidence)] {
        if final_prefix && label != Label::Answer {
            continue;
        }
        let Some(head) = t.get(..word.len()) else { continue };
        if !head.eq_ignore_ascii_case(word) {
            continue;
        }
        let after = t[word.len()..].trim_start_matches(['*', '_', ' ']);
        if let Some(rest) = after.strip_prefix(':') {
            return Some((label, rest.trim_start_matches(['*', '_']).trim()));
        }
    }
    None
}

fn parse_confidence(block: &str) -> f64 {
    let bytes = block.as_bytes();
    let start = (0..bytes.len()).find(|&i| {
        bytes[i].is_ascii_digit() || (bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
    });
    let Some(start) = start else { return DEFAULT_CONFIDENCE };
    let end = (start..bytes.len())
        .find(|&i| !(bytes[i].is_ascii_digit() || bytes[i] == b'.'))
        .unwrap_or(bytes.len());
    let Ok(mut value) = block[start..end].trim_end_matches('.').parse::<f64>() else {
        return DEFAULT_CONFIDENCE;
    };
    if block[end..].trim_start().starts_with('%') {
        value /= 100.0;
    }
    if !value.is_finite() {
        return DEFAULT_CONFIDENCE;
    }
    value.clamp(0.0, 1.0)
}

/// Extract the `Answer:`, `Reasoning:`, `Confidence:` blocks in any order.
/// Labels are matched case-insensitively at line starts; the first block of
/// each label wins. Missing reasoning is empty and missing confidence is 0.5.
pub fn parse_agent_output(text: &str) -> Result<ParsedOutput, ParseError> {
    let mut blocks: [Option<Vec<&str>>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in text.lines() {
        if let Some((label, rest)) = label_of(line) {
            let slot = label as usize;
            if blocks[slot].is_none() {
                blocks[slot] = Some(vec![rest]);
                current = Some(slot);
            } else {
                current = None;
            }
            continue;
        }
        if let Some(slot) = current {
            if let Some(b) = blocks[slot].as_mut() {
                b.push(line);
            }
        }
    }
    let [answer, reasoning, confidence] = blocks;
    let answer = answer.ok_or(ParseError::MissingAnswer)?;
    let answer = answer
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches(['*', '_'])
        .trim()
        .to_string();
    if answer.is_empty() {
        return Err(ParseError::EmptyAnswer);
    }
    let reasoning = reasoning.map(|b| b.join("\n").trim().to_string()).unwrap_or_default();
    let confidence = confidence.map(|b| parse_confidence(&b.join(" "))).unwrap_or(DEFAULT_CONFIDENCE);
    Ok(ParsedOutput { answer, reasoning, confidence })
}

/// Inverse of [`parse_agent_output`] for well-formed fields.
pub fn render_agent_output(answer: &str, reasoning: &str, confidence: f64) -> String {
    format!("Answer: {answer}\nReasoning: {reasoning}\nConfidence: {confidence}")
}

/// Used once the reprompt budget is spent: first non-empty line as the
/// answer, the whole text as reasoning, confidence 0.5.
pub fn fallback_output(text: &str) -> ParsedOutput {
    let answer = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("unknown")
        .to_string();
    ParsedOutput { answer, reasoning: text.trim().to_string(), confidence: DEFAULT_CONFIDENCE }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initial,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionGroup {
    pub canonical_answer: String,
    pub supporter_count: usize,
    pub supporters: Vec<String>,
    /// Positions of the supporters in the agent list.
    pub supporter_indices: Vec<usize>,
    pub reasonings: Vec<String>,
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedSolutions {
    pub groups: Vec<SolutionGroup>,
    pub stage: Stage,
    pub agent_count: usize,
}

impl GroupedSolutions {
    pub fn is_unanimous(&self) -> bool {
        self.groups.len() == 1
    }

    pub fn find(&self, answer: &str) -> Option<&SolutionGroup> {
        let key = normalize_answer(answer);
        self.groups.iter().find(|g| g.canonical_answer == key)
    }
}

/// Bucket answers by normalized equality, groups in first-appearance order.
pub fn group_solutions(answers: &[AgentAnswer], stage: Stage) -> GroupedSolutions {
    let mut groups: Vec<SolutionGroup> = Vec::new();
    for (i, a) in answers.iter().enumerate() {
        let key = a.normalized();
        let group = match groups.iter_mut().position(|g| g.canonical_answer == key) {
            Some(pos) => &mut groups[pos],
            None => {
                groups.push(SolutionGroup {
                    canonical_answer: key,
                    supporter_count: 0,
                    supporters: Vec::new(),
                    supporter_indices: Vec::new(),
                    reasonings: Vec::new(),
                    confidences: Vec::new(),
                });
                groups.last_mut().expect("just pushed")
            }
        };
        group.supporter_count += 1;
        group.supporters.push(a.agent_id.clone());
        group.supporter_indices.push(i);
        group.reasonings.push(a.reasoning.clone());
        group.confidences.push(a.confidence);
    }
    GroupedSolutions { groups, stage, agent_count: answers.len() }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Render grouped solutions for downstream prompts, one block per group:
///
/// `Answer: X (N agents) — Reasoning: Agent 1: …; Confidence: self-confidence Agent 1: 0.90; expert-agreement Agent 1: 1.00`
///
/// The expert-agreement part is present only when `scores` is given.
pub fn render_grouped(grouped: &GroupedSolutions, scores: Option<&AgreementScores>) -> String {
    let mut blocks = Vec::with_capacity(grouped.groups.len());
    for g in &grouped.groups {
        let noun = if g.supporter_count == 1 { "agent" } else { "agents" };
        let reasoning = g
            .supporter_indices
            .iter()
            .zip(&g.reasonings)
            .map(|(i, r)| format!("Agent {}: {}", i + 1, one_line(r)))
            .collect::<Vec<_>>()
            .join(" ");
        let confidence = g
            .supporter_indices
            .iter()
            .zip(&g.confidences)
            .map(|(i, c)| format!("Agent {}: {c:.2}", i + 1))
            .collect::<Vec<_>>()
            .join(", ");
        let mut block = format!(
            "Answer: {} ({} {noun}) — Reasoning: {reasoning}; Confidence: self-confidence {confidence}",
            g.canonical_answer, g.supporter_count
        );
        if let Some(s) = scores {
            let agreement = g
                .supporter_indices
                .iter()
                .map(|&i| format!("Agent {}: {:.2}", i + 1, s.mean(i)))
                .collect::<Vec<_>>()
                .join(", ");
            block.push_str(&format!("; expert-agreement {agreement}"));
        }
        blocks.push(block);
    }
    blocks.join("\n\n")
}

/// One answering agent: an endpoint plus an optional temperature override
/// (several agents may share an endpoint).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    pub endpoint_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f32>,
}

impl AgentSpec {
    pub fn new(agent_id: impl Into<String>, endpoint_id: impl Into<String>) -> Self {
        Self { agent_id: agent_id.into(), endpoint_id: endpoint_id.into(), temperature: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentFailurePolicy {
    /// Abort the question when an agent cannot be reached.
    #[default]
    Abort,
    /// Continue with a placeholder answer of confidence 0.
    SubstituteEmpty,
}

/// Result of asking one agent: its answer plus the call log.
#[derive(Debug)]
pub struct AgentTurn {
    pub answer: AgentAnswer,
    pub calls: Vec<CallRecord>,
    /// Conversation including the accepted reply, for later discussion rounds.
    pub conversation: Vec<ChatMessage>,
    pub error: Option<GatewayError>,
}

pub(crate) fn placeholder_answer(agent_id: &str) -> AgentAnswer {
    AgentAnswer {
        agent_id: agent_id.to_string(),
        answer: "unknown".into(),
        reasoning: String::new(),
        confidence: 0.0,
        raw_text: String::new(),
        parse_fallback_used: true,
    }
}

/// Ask one agent with `request`, reprompting on format violations and
/// falling back to [`fallback_output`] when the budget runs out.
pub(crate) fn ask_agent(
    gateway: &Gateway,
    agent: &AgentSpec,
    mut request: ChatRequest,
    reprompts: u32,
) -> Result<AgentTurn, ExchangeFailure> {
    if let Some(t) = agent.temperature {
        request.temperature = Some(t);
    }
    let r = ask_with_reprompt(gateway, &agent.endpoint_id, request, reprompts, FORMAT_NUDGE, parse_agent_output)?;
    let (parsed, fallback) = match r.parsed {
        Some(p) => (p, false),
        None => (fallback_output(&r.last_text), true),
    };
    let mut conversation = r.request.messages;
    conversation.push(ChatMessage::assistant(r.last_text.clone()));
    Ok(AgentTurn {
        answer: AgentAnswer {
            agent_id: agent.agent_id.clone(),
            answer: parsed.answer,
            reasoning: parsed.reasoning,
            confidence: parsed.confidence,
            raw_text: r.last_text,
            parse_fallback_used: fallback,
        },
        calls: r.calls,
        conversation,
        error: None,
    })
}

pub fn initial_request(prompts: &PromptSet, question: &str, image: &ImagePayload) -> ChatRequest {
    let text = prompts.render(TemplateKind::Initial, &[("question", question)]);
    ChatRequest::user(text).with_image(image.clone())
}

/// Step 1: prompt every agent with the initial prompt and parse the replies.
/// Agents run concurrently; the output follows agent order.
pub fn generate_initial_answers(
    gateway: &Gateway,
    prompts: &PromptSet,
    question: &str,
    image: &ImagePayload,
    agents: &[AgentSpec],
    reprompts: u32,
    policy: AgentFailurePolicy,
) -> Result<Vec<AgentTurn>, (GatewayError, Vec<AgentTurn>)> {
    let turns: Vec<AgentTurn> = parallel::map_in_lanes(
        agents,
        |a| gateway.lane(&a.endpoint_id),
        |_, agent| {
            let request = initial_request(prompts, question, image);
            match ask_agent(gateway, agent, request.clone(), reprompts) {
                Ok(turn) => turn,
                Err(f) => AgentTurn {
                    answer: placeholder_answer(&agent.agent_id),
                    calls: f.calls,
                    conversation: request.messages,
                    error: Some(f.error),
                },
            }
        },
    );
    if policy == AgentFailurePolicy::Abort {
        if let Some(e) = turns.iter().find_map(|t| t.error.clone()) {
            return Err((e, turns));
        }
    }
    Ok(turns)
}
