//! Scripted scenarios shared by integration tests and benches.
#![allow(dead_code)]

use vqa_debate::debate::{PipelineSettings, Roles};
use vqa_debate::gateway::RoleHint;
use vqa_debate::prompts::PromptSet;
use vqa_debate::tools::{builtin_descriptor, default_tool_template, ToolBackend};
use vqa_debate::{
    answering::AgentSpec, EndpointProfile, Gateway, ImagePayload, MockEntry, Orchestrator, PipelineResult, ToolRegistry,
};

pub struct Scenario {
    pub question_id: &'static str,
    pub question: &'static str,
    pub image: ImagePayload,
    pub orch: Orchestrator,
}

impl Scenario {
    pub fn run(&self) -> PipelineResult {
        self.orch.run_pipeline(self.question_id, self.question, &self.image).expect("scenario runs")
    }
}

pub fn image() -> ImagePayload {
    ImagePayload::inline(vec![0x89, b'P', b'N', b'G', 0, 1, 2, 3], "image/png")
}

pub fn reply(reasoning: &str, answer: &str, confidence: f64) -> MockEntry {
    MockEntry::reply(format!("Reasoning: {reasoning}\nAnswer: {answer}\nConfidence: {confidence}"))
}

pub fn alignment(bit: u8) -> MockEntry {
    let why = if bit == 1 { "The agent's answer is consistent with the expert." } else { "The agent's answer contradicts the expert." };
    MockEntry::reply(format!(r#"{{"reasoning": "{why}", "alignment": "{bit}"}}"#))
}

/// Three answerers, a recruiter, a scorer, an aggregator, and two tool
/// endpoints: a structured grounder and a model-backed OCR reader.
pub fn orchestrator(agents: &[&str], settings: PipelineSettings, latency_ms: u64) -> Orchestrator {
    let mut profiles: Vec<EndpointProfile> = agents.iter().map(|a| EndpointProfile::mock(*a, RoleHint::Answerer)).collect();
    profiles.push(EndpointProfile::mock("recruiter", RoleHint::Recruiter));
    profiles.push(EndpointProfile::mock("scorer", RoleHint::Scorer));
    profiles.push(EndpointProfile::mock("aggregator", RoleHint::Aggregator));
    profiles.push(EndpointProfile::mock("grounder-ep", RoleHint::Tool));
    profiles.push(EndpointProfile::mock("ocr-ep", RoleHint::Tool));
    for p in &mut profiles {
        p.mock_latency_ms = latency_ms;
    }
    let gateway = Gateway::new(profiles).expect("valid profiles");

    let mut registry = ToolRegistry::standard();
    let grounder = builtin_descriptor("grounder")
        .unwrap()
        .with_backend(ToolBackend::Structured { endpoint_id: "grounder-ep".into() });
    let ocr = builtin_descriptor("ocr")
        .unwrap()
        .with_backend(ToolBackend::Model { endpoint_id: "ocr-ep".into(), template: default_tool_template("ocr") });
    registry.register(grounder, true).unwrap();
    registry.register(ocr, true).unwrap();

    let roles = Roles {
        agents: agents.iter().map(|a| AgentSpec::new(*a, *a)).collect(),
        recruiter: "recruiter".into(),
        scorer: "scorer".into(),
        aggregator: "aggregator".into(),
    };
    Orchestrator::new(gateway, registry, PromptSet::default(), roles, settings).expect("valid setup")
}

pub const GOLDEN_AGENTS: [&str; 3] = ["agent-1", "agent-2", "agent-3"];

pub const GOLDEN_PLAN: &str = r#"Agents 1 and 3 think the shop is a bakery while Agent 2 thinks it is a pharmacy.
{
  "experts": ["grounder", "ocr"],
  "inputs": {
    "grounder": {
      "disagreement": "Agent 2 sees a green cross on the storefront, Agents 1 and 3 do not mention one.",
      "justification": "The grounder will confirm whether a green cross is present next to the bicycle.",
      "arguments": ["bicycle", "green cross"]
    },
    "ocr": {
      "disagreement": "Agents disagree on what the shop sign says.",
      "justification": "The OCR expert will read the sign above the shop.",
      "arguments": []
    }
  }
}"#;

/// Disagreement scenario: two agents say bakery, one says pharmacy; the
/// grounder finds no green cross and OCR reads the bakery sign.
pub fn golden(settings: PipelineSettings, latency_ms: u64) -> Scenario {
    let orch = orchestrator(&GOLDEN_AGENTS, settings, latency_ms);
    script_golden(orch.gateway());
    Scenario {
        question_id: "golden-bakery",
        question: "What kind of shop is behind the bicycle?",
        image: image(),
        orch,
    }
}

pub fn script_golden(g: &Gateway) {
    g.register_mock_script(
        "agent-1",
        [
            reply("There are loaves of bread displayed in the window behind the bicycle.", "Bakery", 0.7),
            reply("I agree with Agent 3; the OCR expert reads CORNER BAKERY on the sign.", "Bakery", 0.9),
        ],
    )
    .unwrap();
    g.register_mock_script(
        "agent-2",
        [
            MockEntry::reply("Answer: Pharmacy\nReasoning: The green cross on the storefront suggests a pharmacy.\nConfidence: 0.6"),
            reply(
                "I disagree with my earlier answer. The grounder found no green cross and the sign reads CORNER BAKERY.",
                "Bakery",
                0.8,
            ),
        ],
    )
    .unwrap();
    g.register_mock_script(
        "agent-3",
        [
            reply("The striped awning and the display of pastries look like a bakery.", "bakery.", 0.55),
            reply("I agree with Agent 1; the sign text confirms it.", "bakery", 0.85),
        ],
    )
    .unwrap();
    g.register_mock_script("recruiter", [MockEntry::reply(GOLDEN_PLAN)]).unwrap();
    g.register_mock_script(
        "grounder-ep",
        [MockEntry::reply(r#"[{"label": "bicycle", "score": 0.93, "box": [0.05, 0.55, 0.35, 0.95]}]"#)],
    )
    .unwrap();
    g.register_mock_script("ocr-ep", [MockEntry::reply("CORNER BAKERY\nFresh bread daily")]).unwrap();
    // row-major: agent 1 (grounder, ocr), agent 2, agent 3; then the same after discussion
    let bits = [1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1];
    g.register_mock_script("scorer", bits.map(alignment)).unwrap();
    g.register_mock_script(
        "aggregator",
        [reply("All agents now agree with the OCR expert, which reads CORNER BAKERY.", "Bakery", 0.92)],
    )
    .unwrap();
}

pub const METER_AGENTS: [&str; 3] = ["ovis", "minicpm-o", "qwenvl"];

/// Parking-meter question: one agent is right from the start, the OCR
/// reading "M-F 9am-6pm" brings the other two around.
pub fn meter(settings: PipelineSettings) -> Scenario {
    let orch = orchestrator(&METER_AGENTS, settings, 0);
    let g = orch.gateway();
    g.register_mock_script(
        "ovis",
        [
            reply("The meter sign lists weekday hours, so enforcement is off on weekends.", "Weekends", 0.7),
            reply("The OCR expert confirms the hours are M-F 9am-6pm, so the days off are Saturday and Sunday.", "Weekends", 0.9),
        ],
    )
    .unwrap();
    g.register_mock_script(
        "minicpm-o",
        [
            reply("Parking enforcement usually stops on public holidays.", "Holidays", 0.6),
            reply("I disagree with my earlier answer. The sign reads M-F 9am-6pm, so there is no enforcement on weekends.", "Weekends", 0.8),
        ],
    )
    .unwrap();
    g.register_mock_script(
        "qwenvl",
        [
            reply("The sign says enforcement is off on Mondays.", "Mondays", 0.5),
            reply("I agree with Agent 1. The OCR expert reads M-F 9am-6pm, which excludes Saturday and Sunday.", "weekends", 0.85),
        ],
    )
    .unwrap();
    g.register_mock_script(
        "recruiter",
        [MockEntry::reply(
            r#"{"experts": ["ocr"], "inputs": {"ocr": {"disagreement": "Agents disagree on what text is written on the meter.", "justification": "The OCR expert can read the meter's enforcement hours.", "arguments": []}}}"#,
        )],
    )
    .unwrap();
    g.register_mock_script("ocr-ep", [MockEntry::reply("M-F 9am-6pm")]).unwrap();
    g.register_mock_script("scorer", [1, 0, 0, 1, 1, 1].map(alignment)).unwrap();
    g.register_mock_script(
        "aggregator",
        [reply("The OCR expert reads M-F 9am-6pm and every agent now concludes the days off are the weekend.", "Weekends", 0.9)],
    )
    .unwrap();
    Scenario {
        question_id: "meter-days-off",
        question: "When does meter enforcement have their days off?",
        image: image(),
        orch,
    }
}

/// All three agents agree at once.
pub fn unanimous(settings: PipelineSettings) -> Scenario {
    let orch = orchestrator(&GOLDEN_AGENTS, settings, 0);
    let g = orch.gateway();
    for a in GOLDEN_AGENTS {
        g.register_mock_script(a, [reply("The sky is clearly visible and blue.", "Blue", 0.9)]).unwrap();
    }
    g.register_mock_script("aggregator", [reply("Every agent says blue.", "Blue", 0.95)]).unwrap();
    Scenario { question_id: "unanimous-sky", question: "What color is the sky?", image: image(), orch }
}
