//! Disagreement-aware multi-agent debate for visual question answering.
//!
//! A question flows through five stages: every answering agent produces an
//! initial `(answer, reasoning, confidence)` triple, a recruiter reads the
//! grouped answers and picks expert vision tools to settle the disagreements,
//! a scorer rates how well each agent agrees with each tool output, the agents
//! discuss with that evidence in hand, and an aggregator picks the final answer.
//!
//! Every model role is reached through [`gateway::Gateway`], which speaks a
//! chat-completions wire format over HTTP or replays scripted mock responses,
//! so whole pipelines run offline and deterministically.

pub mod aggregation;
pub mod agreement;
pub mod analysis;
pub mod answering;
pub mod config;
pub mod debate;
pub mod evaluation;
pub mod exchange;
pub mod gateway;
pub mod parallel;
pub mod prompts;
pub mod recruitment;
pub mod text;
pub mod tools;
pub mod transcript;

pub use aggregation::{majority_vote, AggregationMethod, FinalAnswer};
pub use agreement::{aggregate_scores, AgreementScores};
pub use answering::{group_solutions, parse_agent_output, AgentAnswer, GroupedSolutions, Stage};
pub use config::{ConfigError, RunConfig};
pub use debate::{Orchestrator, PipelineError, PipelineResult, RoundState};
pub use evaluation::{EvalReport, Example};
pub use gateway::{
    ChatMessage, ChatRequest, ChatResponse, EndpointProfile, Gateway, GatewayError, ImagePayload,
    MockEntry,
};
pub use recruitment::{validate_tool_plan, DisagreementReport, ToolInvocation, ToolPlan};
pub use tools::{ExpertOutput, InputKind, ToolDescriptor, ToolRegistry};
pub use transcript::{StageTag, Transcript, TranscriptEvent};
