//! Binary agent/expert agreement and per-agent mean agreement.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answering::AgentAnswer;
use crate::exchange::{ask_with_reprompt, CallRecord, JSON_NUDGE};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::parallel;
use crate::prompts::{PromptSet, TemplateKind};
use crate::recruitment::extract_json_object;
use crate::tools::ExpertOutput;

/// Scorer temperature, pinned low for stable judgements.
pub const SCORER_TEMPERATURE: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgreementError {
    #[error("no successful expert outputs to score against")]
    EmptyExpertSet,
    #[error("score matrix has no rows")]
    NoAgents,
    #[error("row {row} has {got} columns, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("entry ({row}, {col}) is {value}, not 0 or 1")]
    NonBinary { row: usize, col: usize, value: u8 },
}

/// Agreement matrix `s[i][j]` for agent `i` and successful expert output `j`,
/// with exact per-agent means `S_i = (Σ_j s_ij) / denominator`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementScores {
    pub matrix: Vec<Vec<u8>>,
    pub denominator: usize,
}

impl AgreementScores {
    pub fn row_sum(&self, agent: usize) -> usize {
        self.matrix[agent].iter().map(|&b| b as usize).sum()
    }

    pub fn exact_mean(&self, agent: usize) -> Ratio<usize> {
        Ratio::new(self.row_sum(agent), self.denominator)
    }

    pub fn mean(&self, agent: usize) -> f64 {
        self.row_sum(agent) as f64 / self.denominator as f64
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.matrix.len()).map(|i| self.mean(i)).collect()
    }

    pub fn agents(&self) -> usize {
        self.matrix.len()
    }
}

/// Validate a rectangular 0/1 matrix and attach its row means.
pub fn aggregate_scores(matrix: Vec<Vec<u8>>) -> Result<AgreementScores, AgreementError> {
    let first = matrix.first().ok_or(AgreementError::NoAgents)?;
    let cols = first.len();
    for (row, r) in matrix.iter().enumerate() {
        if r.len() != cols {
            return Err(AgreementError::Ragged { row, got: r.len(), expected: cols });
        }
        if let Some((col, &value)) = r.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(AgreementError::NonBinary { row, col, value });
        }
    }
    if cols == 0 {
        return Err(AgreementError::EmptyExpertSet);
    }
    Ok(AgreementScores { matrix, denominator: cols })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("scorer reply has no usable \"alignment\" field")]
pub struct ScoreParseError;

/// Read the `"alignment"` field of the scorer's JSON reply as 0 or 1.
pub fn parse_alignment(text: &str) -> Result<u8, ScoreParseError> {
    let value = extract_json_object(text).ok_or(ScoreParseError)?;
    match value.get("alignment") {
        Some(serde_json::Value::String(s)) => match s.trim().chars().next() {
            Some('0') => Ok(0),
            Some('1') => Ok(1),
            _ => Err(ScoreParseError),
        },
        Some(serde_json::Value::Number(n)) => match n.as_u64() {
            Some(v @ (0 | 1)) => Ok(v as u8),
            _ => Err(ScoreParseError),
        },
        Some(serde_json::Value::Bool(b)) => Ok(*b as u8),
        _ => Err(ScoreParseError),
    }
}

pub fn render_agent_for_scoring(agent: &AgentAnswer) -> String {
    format!("Answer: {}\nReasoning: {}", agent.answer, agent.reasoning)
}

#[derive(Debug)]
pub struct PairScore {
    pub score: u8,
    /// The reply never parsed and the score defaulted to 0.
    pub fallback_used: bool,
    pub calls: Vec<CallRecord>,
    pub error: Option<GatewayError>,
}

/// Score one (agent, expert output) pair. Unparseable replies get one
/// reprompt and then default to 0.
pub fn score_pair(
    gateway: &Gateway,
    prompts: &PromptSet,
    agent: &AgentAnswer,
    expert: &ExpertOutput,
    scorer: &str,
    reprompts: u32,
) -> PairScore {
    let agent_text = render_agent_for_scoring(agent);
    let prompt = prompts.render(
        TemplateKind::Agreement,
        &[
            ("disagreement", expert.disagreement_addressed.as_str()),
            ("expert_output", expert.evidence_text.as_str()),
            ("agent_output", agent_text.as_str()),
        ],
    );
    let request = ChatRequest::user(prompt).with_temperature(SCORER_TEMPERATURE);
    match ask_with_reprompt(gateway, scorer, request, reprompts, JSON_NUDGE, parse_alignment) {
        Ok(r) => match r.parsed {
            Some(score) => PairScore { score, fallback_used: false, calls: r.calls, error: None },
            None => {
                tracing::warn!(agent = %agent.agent_id, tool = %expert.tool_name, "scorer reply unparseable; scoring 0");
                PairScore { score: 0, fallback_used: true, calls: r.calls, error: None }
            }
        },
        Err(f) => PairScore { score: 0, fallback_used: true, calls: f.calls, error: Some(f.error) },
    }
}

/// Score every agent against every successful expert output. Returns the
/// pair results in row-major order and the assembled scores, which are
/// `None` (the no-score sentinel) when no expert output succeeded.
pub fn score_all(
    gateway: &Gateway,
    prompts: &PromptSet,
    agents: &[AgentAnswer],
    experts: &[ExpertOutput],
    scorer: &str,
    reprompts: u32,
) -> (Option<AgreementScores>, Vec<PairScore>) {
    let successful: Vec<&ExpertOutput> = experts.iter().filter(|e| e.succeeded).collect();
    let pairs: Vec<(usize, usize)> =
        (0..agents.len()).flat_map(|i| (0..successful.len()).map(move |j| (i, j))).collect();
    let lane = gateway.lane(scorer);
    let results = parallel::map_in_lanes(
        &pairs,
        |_| lane.clone(),
        |_, &(i, j)| score_pair(gateway, prompts, &agents[i], successful[j], scorer, reprompts),
    );
    let cols = successful.len();
    let matrix: Vec<Vec<u8>> = (0..agents.len())
        .map(|i| results[i * cols..(i + 1) * cols].iter().map(|p| p.score).collect())
        .collect();
    (aggregate_scores(matrix).ok(), results)
}
