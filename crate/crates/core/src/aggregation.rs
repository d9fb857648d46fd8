//! Final answer selection: aggregator model or majority vote.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agreement::AgreementScores;
use crate::answering::{parse_agent_output, render_grouped, GroupedSolutions};
use crate::exchange::{ask_with_reprompt, CallRecord, ExchangeFailure, FORMAT_NUDGE};
use crate::gateway::{ChatRequest, Gateway, ImagePayload};
use crate::prompts::{PromptSet, TemplateKind};
use crate::tools::{render_expert_outputs, ExpertOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMethod {
    Aggregator,
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    pub answer: String,
    pub reasoning: String,
    pub confidence: f64,
    pub method: AggregationMethod,
    /// The aggregator's answer matches none of the candidate groups.
    pub off_menu: bool,
    /// The aggregator failed and majority vote was used instead.
    pub degraded: bool,
}

/// Seed for tie-breaking, stable per (run seed, question).
pub fn tie_break_seed(run_seed: u64, question_id: &str) -> u64 {
    // FNV-1a over the id, then a splitmix64 finalizer with the run seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in question_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ run_seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The most-supported answer; ties go to a seeded uniform pick among the
/// tied groups. Confidence is the winner's share of agents.
///
/// # Panics
/// If `grouped` has no groups.
pub fn majority_vote(grouped: &GroupedSolutions, seed: u64) -> FinalAnswer {
    let best = grouped.groups.iter().map(|g| g.supporter_count).max().expect("majority vote needs a group");
    let tied: Vec<_> = grouped.groups.iter().filter(|g| g.supporter_count == best).collect();
    let winner = if tied.len() == 1 {
        tied[0]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        tied[rng.gen_range(0..tied.len())]
    };
    let total: usize = grouped.groups.iter().map(|g| g.supporter_count).sum();
    FinalAnswer {
        answer: winner.canonical_answer.clone(),
        reasoning: format!("Majority vote: {} of {} agents.", winner.supporter_count, total),
        confidence: winner.supporter_count as f64 / total as f64,
        method: AggregationMethod::MajorityVote,
        off_menu: false,
        degraded: false,
    }
}

#[derive(Debug)]
pub struct Aggregation {
    pub answer: FinalAnswer,
    pub calls: Vec<CallRecord>,
}

pub struct AggregatorInput<'a> {
    pub question: &'a str,
    pub image: &'a ImagePayload,
    pub grouped_final: &'a GroupedSolutions,
    /// Shown in addition to the final answers when set.
    pub grouped_initial: Option<&'a GroupedSolutions>,
    pub expert_outputs: &'a [ExpertOutput],
    pub scores: Option<&'a AgreementScores>,
}

pub fn aggregator_prompt(prompts: &PromptSet, input: &AggregatorInput<'_>) -> String {
    let mut grouped = render_grouped(input.grouped_final, input.scores);
    if let Some(initial) = input.grouped_initial {
        grouped.push_str("\n\nAnswers before discussion:\n");
        grouped.push_str(&render_grouped(initial, None));
    }
    let tools = render_expert_outputs(input.expert_outputs);
    prompts.render(
        TemplateKind::Aggregator,
        &[("question", input.question), ("grouped_output", grouped.as_str()), ("tool_outputs", tools.as_str())],
    )
}

/// Ask the aggregator to pick the final answer. An unparseable reply gets
/// one reprompt, then majority vote takes over.
pub fn aggregate(
    gateway: &Gateway,
    prompts: &PromptSet,
    input: &AggregatorInput<'_>,
    aggregator: &str,
    reprompts: u32,
    seed: u64,
) -> Result<Aggregation, ExchangeFailure> {
    let request = ChatRequest::user(aggregator_prompt(prompts, input)).with_image(input.image.clone());
    let r = ask_with_reprompt(gateway, aggregator, request, reprompts, FORMAT_NUDGE, parse_agent_output)?;
    let answer = match r.parsed {
        Some(p) => FinalAnswer {
            off_menu: input.grouped_final.find(&p.answer).is_none(),
            answer: p.answer,
            reasoning: p.reasoning,
            confidence: p.confidence,
            method: AggregationMethod::Aggregator,
            degraded: false,
        },
        None => {
            tracing::warn!("aggregator reply unparseable; using majority vote");
            FinalAnswer { degraded: true, ..majority_vote(input.grouped_final, seed) }
        }
    };
    Ok(Aggregation { answer, calls: r.calls })
}
