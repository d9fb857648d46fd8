//! Discussion rounds and the full per-question pipeline.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{aggregate, majority_vote, tie_break_seed, AggregatorInput, FinalAnswer};
use crate::agreement::{score_all, AgreementScores};
use crate::answering::{
    ask_agent, generate_initial_answers, group_solutions, render_grouped, AgentAnswer, AgentFailurePolicy, AgentSpec,
    AgentTurn, GroupedSolutions, Stage,
};
use crate::exchange::{CallRecord, ExchangeFailure};
use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError, ImagePayload, TokenTotals};
use crate::parallel;
use crate::prompts::{PromptSet, TemplateKind};
use crate::recruitment::{recruit_tools, ToolPlan};
use crate::tools::{execute_plan, render_expert_outputs, ExpertOutput, ToolRegistry};
use crate::transcript::{EventBody, StageTag, Transcript};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline setup: {0}")]
    InvalidSetup(String),
    #[error("question `{question_id}` aborted during {stage:?}: {error}")]
    AbortedRun {
        question_id: String,
        stage: StageTag,
        error: GatewayError,
        transcript: Box<Transcript>,
    },
}

/// Format-reprompt budgets per role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepromptBudgets {
    pub answerer: u32,
    pub recruiter: u32,
    pub scorer: u32,
    pub aggregator: u32,
}

impl Default for RepromptBudgets {
    fn default() -> Self {
        Self { answerer: 2, recruiter: 1, scorer: 1, aggregator: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Skip recruitment, tools and scoring.
    pub no_tools: bool,
    /// Call tools but never score agreement.
    pub no_scores: bool,
    /// Replace the aggregator with majority vote.
    pub majority_vote: bool,
    /// Answerers are copies of one endpoint; recorded for reports.
    pub single_model: bool,
    pub show_initial_answers_to_aggregator: bool,
    pub withheld_tools: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub rounds: usize,
    /// Unanimous answers skip the remaining rounds.
    pub short_circuit_unanimous: bool,
    pub run_seed: u64,
    pub reprompts: RepromptBudgets,
    pub failure_policy: AgentFailurePolicy,
    pub ablations: Ablations,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            rounds: 1,
            short_circuit_unanimous: true,
            run_seed: 0,
            reprompts: RepromptBudgets::default(),
            failure_policy: AgentFailurePolicy::Abort,
            ablations: Ablations::default(),
        }
    }
}

/// Endpoints for each pipeline role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub agents: Vec<AgentSpec>,
    pub recruiter: String,
    pub scorer: String,
    pub aggregator: String,
}

/// `n` agents on one endpoint with a raised sampling temperature.
pub fn single_model_agents(endpoint_id: &str, n: usize, temperature: f32) -> Vec<AgentSpec> {
    (0..n)
        .map(|k| AgentSpec {
            agent_id: format!("{endpoint_id}#{}", k + 1),
            endpoint_id: endpoint_id.to_string(),
            temperature: Some(temperature),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round_index: usize,
    pub grouped: GroupedSolutions,
    /// Evidence available when this round's answers were scored.
    pub expert_outputs: Vec<ExpertOutput>,
    /// Agreement of this round's answers with `expert_outputs`.
    pub scores: Option<AgreementScores>,
    pub per_agent: Vec<AgentAnswer>,
    /// Carried forward unchanged after a unanimity short-circuit.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub question_id: String,
    /// Round 0 is the initial generation; one entry per configured round follows.
    pub rounds: Vec<RoundState>,
    pub final_answer: FinalAnswer,
    pub final_scores: Option<AgreementScores>,
    /// Evidence accumulated over all rounds.
    pub expert_outputs: Vec<ExpertOutput>,
    pub token_totals: TokenTotals,
    pub tool_plans: Vec<ToolPlan>,
    pub transcript: Transcript,
}

impl PipelineResult {
    pub fn final_round(&self) -> &RoundState {
        self.rounds.last().expect("rounds are never empty")
    }
}

pub fn discussion_prompt(prompts: &PromptSet, state: &RoundState) -> String {
    let grouped = render_grouped(&state.grouped, state.scores.as_ref());
    let tools = render_expert_outputs(&state.expert_outputs);
    prompts.render(TemplateKind::Discussion, &[("grouped_solutions", grouped.as_str()), ("tool_outputs", tools.as_str())])
}

/// Ask every agent to reconsider in light of `state`. Each agent continues
/// its own conversation; `conversations[i]` belongs to `agents[i]`.
pub fn run_discussion_round(
    gateway: &Gateway,
    prompts: &PromptSet,
    state: &RoundState,
    agents: &[AgentSpec],
    conversations: &[Vec<ChatMessage>],
    reprompts: u32,
) -> Vec<Result<AgentTurn, ExchangeFailure>> {
    let prompt = discussion_prompt(prompts, state);
    let indexed: Vec<usize> = (0..agents.len()).collect();
    parallel::map_in_lanes(
        &indexed,
        |&i| gateway.lane(&agents[i].endpoint_id),
        |_, &i| {
            let mut messages = conversations[i].clone();
            messages.push(ChatMessage::user(prompt.clone()));
            ask_agent(gateway, &agents[i], ChatRequest::new(messages), reprompts)
        },
    )
}

/// Owns the gateway, registry and prompts, and runs questions end to end.
pub struct Orchestrator {
    gateway: Gateway,
    registry: ToolRegistry,
    prompts: PromptSet,
    roles: Roles,
    settings: PipelineSettings,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("roles", &self.roles).field("settings", &self.settings).finish()
    }
}

impl Orchestrator {
    pub fn new(
        gateway: Gateway,
        registry: ToolRegistry,
        prompts: PromptSet,
        roles: Roles,
        settings: PipelineSettings,
    ) -> Result<Self, PipelineError> {
        if roles.agents.is_empty() {
            return Err(PipelineError::InvalidSetup("at least one answering agent is required".into()));
        }
        if settings.rounds == 0 {
            return Err(PipelineError::InvalidSetup("rounds must be at least 1".into()));
        }
        let mut ids = HashSet::new();
        for a in &roles.agents {
            if !ids.insert(a.agent_id.as_str()) {
                return Err(PipelineError::InvalidSetup(format!("duplicate agent id `{}`", a.agent_id)));
            }
        }
        let referenced = roles
            .agents
            .iter()
            .map(|a| a.endpoint_id.as_str())
            .chain([roles.recruiter.as_str(), roles.scorer.as_str(), roles.aggregator.as_str()]);
        for id in referenced {
            if gateway.profile(id).is_none() {
                return Err(PipelineError::InvalidSetup(format!("unknown endpoint `{id}`")));
            }
        }
        for t in &settings.ablations.withheld_tools {
            if !registry.contains(t) {
                return Err(PipelineError::InvalidSetup(format!("withheld tool `{t}` is not registered")));
            }
        }
        let registry = registry.without(&settings.ablations.withheld_tools);
        Ok(Self { gateway, registry, prompts, roles, settings })
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn run_pipeline(
        &self,
        question_id: &str,
        question: &str,
        image: &ImagePayload,
    ) -> Result<PipelineResult, PipelineError> {
        Run::new(self, question_id).execute(question, image)
    }
}

/// Mutable state of one question's run.
struct Run<'a> {
    orch: &'a Orchestrator,
    question_id: String,
    transcript: Transcript,
    tokens: TokenTotals,
}

impl<'a> Run<'a> {
    fn new(orch: &'a Orchestrator, question_id: &str) -> Self {
        Self { orch, question_id: question_id.to_string(), transcript: Transcript::new(question_id), tokens: TokenTotals::default() }
    }

    fn log_calls(&mut self, round: usize, stage: StageTag, agent_id: Option<&str>, calls: &[CallRecord]) {
        for c in calls {
            if let Some(u) = c.usage() {
                self.tokens.add(&u);
            }
            self.transcript.push_call(round, stage, agent_id, c);
        }
    }

    fn abort(self, stage: StageTag, error: GatewayError) -> PipelineError {
        PipelineError::AbortedRun { question_id: self.question_id, stage, error, transcript: Box::new(self.transcript) }
    }

    fn log_turn(&mut self, round: usize, stage: StageTag, turn: &AgentTurn) {
        let id = turn.answer.agent_id.clone();
        self.log_calls(round, stage, Some(&id), &turn.calls);
        if turn.answer.parse_fallback_used {
            let detail = if turn.error.is_some() { "agent unreachable; placeholder answer" } else { "reply never matched the format" };
            self.transcript.push(round, stage, EventBody::Fallback { agent_id: Some(id.clone()), detail: detail.into() });
        }
        self.transcript.push(
            round,
            stage,
            EventBody::Answer { agent_id: id, answer: turn.answer.answer.clone(), confidence: turn.answer.confidence },
        );
    }

    fn execute(mut self, question: &str, image: &ImagePayload) -> Result<PipelineResult, PipelineError> {
        let orch = self.orch;
        let s = &orch.settings;
        let ab = &s.ablations;
        let agents = &orch.roles.agents;

        let turns = match generate_initial_answers(
            &orch.gateway,
            &orch.prompts,
            question,
            image,
            agents,
            s.reprompts.answerer,
            s.failure_policy,
        ) {
            Ok(t) => t,
            Err((e, turns)) => {
                for t in &turns {
                    self.log_turn(0, StageTag::Initial, t);
                }
                return Err(self.abort(StageTag::Initial, e));
            }
        };
        for t in &turns {
            self.log_turn(0, StageTag::Initial, t);
        }
        let mut conversations: Vec<Vec<ChatMessage>> = turns.iter().map(|t| t.conversation.clone()).collect();
        let per_agent: Vec<AgentAnswer> = turns.into_iter().map(|t| t.answer).collect();
        let mut rounds = vec![RoundState {
            round_index: 0,
            grouped: group_solutions(&per_agent, Stage::Initial),
            expert_outputs: vec![],
            scores: None,
            per_agent,
            skipped: false,
        }];
        let mut evidence: Vec<ExpertOutput> = Vec::new();
        let mut tool_plans = Vec::new();
        // round whose answers are the latest non-skipped ones
        let mut live = 0;

        for r in 1..=s.rounds {
            let prev = &rounds[live];
            if s.short_circuit_unanimous && prev.grouped.is_unanimous() {
                self.transcript.push(r, StageTag::Discuss, EventBody::Skip { reason: "answers are unanimous".into() });
                let mut carried = prev.clone();
                carried.round_index = r;
                carried.skipped = true;
                rounds.push(carried);
                continue;
            }

            if !ab.no_tools {
                let rec = match recruit_tools(
                    &orch.gateway,
                    &orch.prompts,
                    &prev.grouped,
                    question,
                    &orch.roles.recruiter,
                    &orch.registry,
                    s.reprompts.recruiter,
                ) {
                    Ok(rec) => rec,
                    Err(f) => {
                        self.log_calls(r, StageTag::Recruit, None, &f.calls);
                        return Err(self.abort(StageTag::Recruit, f.error));
                    }
                };
                self.log_calls(r, StageTag::Recruit, None, &rec.calls);
                let plan = rec.report.plan.clone().unwrap_or_default();
                self.transcript.push(
                    r,
                    StageTag::Recruit,
                    EventBody::Plan { unanimous: rec.report.unanimous, plan: plan.clone(), warnings: rec.report.warnings },
                );

                let seen: HashSet<_> = evidence.iter().map(ExpertOutput::key).collect();
                let mut fresh = ToolPlan::default();
                for inv in &plan.invocations {
                    if seen.contains(&(inv.tool_name.clone(), inv.arguments.clone())) {
                        self.transcript.push(
                            r,
                            StageTag::Tool,
                            EventBody::Skip { reason: format!("`{}` already ran with these arguments", inv.tool_name) },
                        );
                    } else {
                        fresh.invocations.push(inv.clone());
                    }
                }
                let runs = execute_plan(&orch.gateway, &orch.registry, &fresh, image, question);
                for run in runs {
                    self.log_calls(r, StageTag::Tool, None, &run.calls);
                    let o = &run.output;
                    self.transcript.push(
                        r,
                        StageTag::Tool,
                        EventBody::ToolCall {
                            tool_name: o.tool_name.clone(),
                            arguments: o.arguments.clone(),
                            succeeded: o.succeeded,
                            evidence: o.evidence_text.clone(),
                            error: o.error.clone(),
                        },
                    );
                    evidence.push(run.output);
                }
                tool_plans.push(plan);

                if !ab.no_scores {
                    let scores = self.score(r, &rounds[live].per_agent, &evidence);
                    rounds[live].scores = scores;
                }
                rounds[live].expert_outputs = evidence.clone();
            }

            let results = run_discussion_round(
                &orch.gateway,
                &orch.prompts,
                &rounds[live],
                agents,
                &conversations,
                s.reprompts.answerer,
            );
            let mut next = Vec::with_capacity(agents.len());
            let mut failure = None;
            for (i, res) in results.into_iter().enumerate() {
                match res {
                    Ok(turn) => {
                        self.log_turn(r, StageTag::Discuss, &turn);
                        conversations[i] = turn.conversation;
                        next.push(turn.answer);
                    }
                    Err(f) => {
                        self.log_calls(r, StageTag::Discuss, Some(&agents[i].agent_id), &f.calls);
                        let previous = rounds[live].per_agent[i].clone();
                        self.transcript.push(
                            r,
                            StageTag::Discuss,
                            EventBody::Fallback {
                                agent_id: Some(agents[i].agent_id.clone()),
                                detail: "agent unreachable; previous answer kept".into(),
                            },
                        );
                        failure.get_or_insert(f.error);
                        next.push(previous);
                    }
                }
            }
            if let Some(e) = failure {
                if s.failure_policy == AgentFailurePolicy::Abort {
                    return Err(self.abort(StageTag::Discuss, e));
                }
            }
            rounds.push(RoundState {
                round_index: r,
                grouped: group_solutions(&next, Stage::Final),
                expert_outputs: vec![],
                scores: None,
                per_agent: next,
                skipped: false,
            });
            live = r;
        }

        // S_F: the final answers against the evidence gathered so far
        let final_scores = if ab.no_tools || ab.no_scores || live == 0 {
            rounds[live].scores.clone()
        } else {
            let round = s.rounds;
            let scores = self.score(round, &rounds[live].per_agent, &evidence);
            rounds[live].expert_outputs = evidence.clone();
            rounds[live].scores = scores.clone();
            scores
        };
        let last = rounds.len() - 1;
        for i in live + 1..=last {
            rounds[i].expert_outputs = rounds[live].expert_outputs.clone();
            rounds[i].scores = rounds[live].scores.clone();
        }

        let round = s.rounds;
        let grouped_final = rounds[last].grouped.clone();
        let final_answer = if ab.majority_vote {
            majority_vote(&grouped_final, tie_break_seed(s.run_seed, &self.question_id))
        } else {
            let input = AggregatorInput {
                question,
                image,
                grouped_final: &grouped_final,
                grouped_initial: ab.show_initial_answers_to_aggregator.then_some(&rounds[0].grouped),
                expert_outputs: &evidence,
                scores: final_scores.as_ref(),
            };
            match aggregate(
                &orch.gateway,
                &orch.prompts,
                &input,
                &orch.roles.aggregator,
                s.reprompts.aggregator,
                tie_break_seed(s.run_seed, &self.question_id),
            ) {
                Ok(a) => {
                    self.log_calls(round, StageTag::Aggregate, None, &a.calls);
                    if a.answer.degraded {
                        self.transcript.push(
                            round,
                            StageTag::Aggregate,
                            EventBody::Fallback { agent_id: None, detail: "aggregator reply unparseable; majority vote used".into() },
                        );
                    }
                    a.answer
                }
                Err(f) => {
                    self.log_calls(round, StageTag::Aggregate, None, &f.calls);
                    return Err(self.abort(StageTag::Aggregate, f.error));
                }
            }
        };
        self.transcript.push(
            round,
            StageTag::Aggregate,
            EventBody::Final {
                answer: final_answer.answer.clone(),
                confidence: final_answer.confidence,
                method: final_answer.method,
                off_menu: final_answer.off_menu,
            },
        );

        Ok(PipelineResult {
            question_id: self.question_id,
            rounds,
            final_answer,
            final_scores,
            expert_outputs: evidence,
            token_totals: self.tokens,
            tool_plans,
            transcript: self.transcript,
        })
    }

    fn score(&mut self, round: usize, answers: &[AgentAnswer], evidence: &[ExpertOutput]) -> Option<AgreementScores> {
        let orch = self.orch;
        if !evidence.iter().any(|e| e.succeeded) {
            self.transcript.push(round, StageTag::Score, EventBody::Skip { reason: "no successful expert outputs".into() });
            return None;
        }
        let (scores, pairs) =
            score_all(&orch.gateway, &orch.prompts, answers, evidence, &orch.roles.scorer, orch.settings.reprompts.scorer);
        for p in &pairs {
            self.log_calls(round, StageTag::Score, None, &p.calls);
        }
        if let Some(sc) = &scores {
            self.transcript.push(round, StageTag::Score, EventBody::Scores { matrix: sc.matrix.clone(), means: sc.means() });
        }
        scores
    }
}
