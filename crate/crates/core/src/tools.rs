//! Expert tool registry, plan execution, and structured-output rendering.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exchange::{call, CallRecord};
use crate::gateway::{ChatRequest, Gateway, ImagePayload};
use crate::parallel;
use crate::prompts::render;
use crate::recruitment::{ToolInvocation, ToolPlan};
use crate::text::normalize_answer;

/// Default per-tool timeout.
pub const DEFAULT_TOOL_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    None,
    QueryList,
}

/// A labeled box from a detector or grounder, coordinates normalized to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

/// Raw output of an in-process tool executor.
#[derive(Debug, Clone, PartialEq)]
pub enum ToolReply {
    Text(String),
    Detections(Vec<Detection>),
}

/// In-process tool implementation.
pub trait ToolExecutor: Send + Sync {
    fn execute(&self, image: &ImagePayload, question: &str, arguments: &[String]) -> Result<ToolReply, String>;
}

#[derive(Clone)]
pub enum ToolBackend {
    /// A model endpoint prompted with a role-focusing template. Supported
    /// placeholders: `<question>`, `<arguments>`.
    Model { endpoint_id: String, template: String },
    /// An endpoint whose reply is a JSON list of detections.
    Structured { endpoint_id: String },
    Custom(Arc<dyn ToolExecutor>),
    /// Listed for recruitment but nothing to run it on.
    Unbound,
}

impl fmt::Debug for ToolBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolBackend::Model { endpoint_id, .. } => write!(f, "Model({endpoint_id})"),
            ToolBackend::Structured { endpoint_id } => write!(f, "Structured({endpoint_id})"),
            ToolBackend::Custom(_) => f.write_str("Custom"),
            ToolBackend::Unbound => f.write_str("Unbound"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToolDescriptor {
    pub tool_name: String,
    pub input_kind: InputKind,
    /// Shown after "input:" in the recruiter's expert list.
    pub input_description: String,
    pub capability_sentence: String,
    pub backend: ToolBackend,
    pub timeout: Duration,
}

impl ToolDescriptor {
    pub fn new(
        tool_name: impl Into<String>,
        input_kind: InputKind,
        input_description: impl Into<String>,
        capability_sentence: impl Into<String>,
    ) -> Self {
        Self {
            tool_name: tool_name.into(),
            input_kind,
            input_description: input_description.into(),
            capability_sentence: capability_sentence.into(),
            backend: ToolBackend::Unbound,
            timeout: DEFAULT_TOOL_TIMEOUT,
        }
    }

    pub fn with_backend(mut self, backend: ToolBackend) -> Self {
        self.backend = backend;
        self
    }

    /// Line in the recruiter prompt's expert list.
    pub fn expert_line(&self) -> String {
        format!("\"{}\" (input: {}) - {}", self.tool_name, self.input_description, self.capability_sentence)
    }
}

pub const BUILTIN_TOOLS: [&str; 7] = ["spatial", "ocr", "grounder", "detector", "captioning", "attribute", "reasoning"];

/// Descriptor of one of the seven standard expert tools, unbound.
pub fn builtin_descriptor(name: &str) -> Option<ToolDescriptor> {
    let (kind, input, capability) = match name {
        "spatial" => (
            InputKind::QueryList,
            "list. objects that have confused spatial relations",
            "Has perfect understanding of spatial relations between objects. Use this when agents are unsure about the placement of items in a scene.",
        ),
        "ocr" => (
            InputKind::None,
            "none",
            "Can correctly read all text in an image. Use this when agents have differing views on what the text is in an image.",
        ),
        "grounder" => (
            InputKind::QueryList,
            "list. objects you are trying to find",
            "Will find any object if it is an image, otherwise it will return nothing. Use this when agents are not agreeing on what's present in an image.",
        ),
        "detector" => (
            InputKind::None,
            "none",
            "Will provide a list of objects in the image, their counts, and their bounding boxes. Only use this when agents are differing in their counts of objects in an image.",
        ),
        "captioning" => (
            InputKind::QueryList,
            "list. objects you want captions for",
            "Can give a detailed description of what's going in the image relevant to the question. Use this when agents might need a better idea of the general scene or descriptions of specific objects.",
        ),
        "attribute" => (
            InputKind::QueryList,
            "list. objects you want attributes for",
            "Will give information on different features of objects in the image, including color, properties, catgories, and more. Use this when agents are confused about the features of relevant objects and need many surface level features.",
        ),
        "reasoning" => (
            InputKind::QueryList,
            "list. objects you want reasoning for",
            "Has better world knowledge and advanced reasoning capabilities about what might be going on in an image. Use this when agents are confused or conflicting in their inferences about the scene. This is essentially a meta-reasoning agent that intervenes when models have different conclusions based on the same assumptions.",
        ),
        _ => return None,
    };
    Some(ToolDescriptor::new(name, kind, input, capability))
}

/// Role-focusing template for a model-backed tool.
pub fn default_tool_template(name: &str) -> String {
    match name {
        "spatial" => "You are a spatial reasoning expert. Question: <question>\nDescribe precisely where these objects are in the image and how they are positioned relative to each other: <arguments>.",
        "ocr" => "You are an OCR expert. Read all text visible in the image and transcribe it exactly as written.",
        "grounder" => "You are a visual grounding expert. For each of these objects, state whether it is present in the image and where: <arguments>.",
        "detector" => "You are an object detection expert. List every object in the image with its count and location.",
        "captioning" => "You are a captioning expert. Question: <question>\nGive a detailed description of the image relevant to the question, covering: <arguments>.",
        "attribute" => "You are an attribute expert. Question: <question>\nList the visual attributes (color, material, shape, category, and other properties) of: <arguments>.",
        "reasoning" => "You are a visual reasoning expert with broad world knowledge. Question: <question>\nExplain what is most likely going on in the image with respect to: <arguments>.",
        _ => "You are an expert tool. Question: <question>\nGive your expert analysis of the image concerning: <arguments>.",
    }
    .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ToolError {
    #[error("tool `{0}` is already registered")]
    DuplicateToolName(String),
    #[error("tool descriptor `{0}` is invalid: {1}")]
    InvalidDescriptor(String, String),
    #[error("payload for `{tool}` does not match the detection schema: {detail}")]
    PayloadSchemaMismatch { tool: String, detail: String },
}

/// Tools in registration order; that order is the order of the recruiter's
/// expert list.
#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<ToolDescriptor>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The seven standard tools, unbound.
    pub fn standard() -> Self {
        let mut r = Self::new();
        for name in BUILTIN_TOOLS {
            r.register(builtin_descriptor(name).expect("builtin"), false).expect("distinct builtins");
        }
        r
    }

    pub fn register(&mut self, descriptor: ToolDescriptor, allow_override: bool) -> Result<(), ToolError> {
        let name = descriptor.tool_name.trim().to_lowercase();
        if name.is_empty() {
            return Err(ToolError::InvalidDescriptor(descriptor.tool_name, "empty name".into()));
        }
        if descriptor.capability_sentence.trim().is_empty() {
            return Err(ToolError::InvalidDescriptor(name, "empty capability sentence".into()));
        }
        let descriptor = ToolDescriptor { tool_name: name.clone(), ..descriptor };
        match self.tools.iter().position(|t| t.tool_name == name) {
            Some(_) if !allow_override => Err(ToolError::DuplicateToolName(name)),
            Some(pos) => {
                self.tools[pos] = descriptor;
                Ok(())
            }
            None => {
                self.tools.push(descriptor);
                Ok(())
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ToolDescriptor> {
        self.tools.iter().find(|t| t.tool_name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> Vec<&str> {
        self.tools.iter().map(|t| t.tool_name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// A copy without the named tools.
    pub fn without(&self, names: &[String]) -> Self {
        Self { tools: self.tools.iter().filter(|t| !names.contains(&t.tool_name)).cloned().collect() }
    }

    pub fn render_expert_list(&self) -> String {
        self.tools.iter().map(ToolDescriptor::expert_line).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertOutput {
    pub tool_name: String,
    pub arguments: Vec<String>,
    pub disagreement_addressed: String,
    pub evidence_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured_payload: Option<Vec<Detection>>,
    pub succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExpertOutput {
    pub fn text(tool: &str, arguments: Vec<String>, disagreement: &str, evidence: &str) -> Self {
        Self {
            tool_name: tool.into(),
            arguments,
            disagreement_addressed: disagreement.into(),
            evidence_text: evidence.into(),
            structured_payload: None,
            succeeded: true,
            error: None,
        }
    }

    pub fn failed(tool: &str, arguments: Vec<String>, disagreement: &str, error: &str) -> Self {
        Self {
            tool_name: tool.into(),
            arguments,
            disagreement_addressed: disagreement.into(),
            evidence_text: String::new(),
            structured_payload: None,
            succeeded: false,
            error: Some(error.into()),
        }
    }

    /// Identity used to deduplicate evidence across rounds.
    pub fn key(&self) -> (String, Vec<String>) {
        (self.tool_name.clone(), self.arguments.clone())
    }
}

/// Render expert outputs for discussion and aggregation prompts. Failed
/// outputs contribute nothing.
pub fn render_expert_outputs(outputs: &[ExpertOutput]) -> String {
    let lines: Vec<String> = outputs
        .iter()
        .filter(|o| o.succeeded)
        .enumerate()
        .map(|(i, o)| {
            let args = if o.arguments.is_empty() { String::new() } else { format!(" on {}", o.arguments.join(", ")) };
            format!(
                "Expert {} ({}{args}). Disagreement: {} Output: {}",
                i + 1,
                o.tool_name,
                o.disagreement_addressed.trim(),
                o.evidence_text.trim()
            )
        })
        .collect();
    if lines.is_empty() {
        "No expert outputs are available.".to_string()
    } else {
        lines.join("\n")
    }
}

/// Coarse location of a box from the thirds its center falls in.
pub fn location_words(bbox: &[f64; 4]) -> String {
    let cx = (bbox[0] + bbox[2]) / 2.0;
    let cy = (bbox[1] + bbox[3]) / 2.0;
    let third = |v: f64| {
        if v < 1.0 / 3.0 {
            0
        } else if v < 2.0 / 3.0 {
            1
        } else {
            2
        }
    };
    let vertical = ["top", "middle", "bottom"][third(cy)];
    let horizontal = ["left", "center", "right"][third(cx)];
    match (vertical, horizontal) {
        ("middle", "center") => "center".to_string(),
        (v, h) => format!("{v} {h}"),
    }
}

pub fn parse_detections(tool: &str, payload: &str) -> Result<Vec<Detection>, ToolError> {
    let mismatch = |detail: String| ToolError::PayloadSchemaMismatch { tool: tool.to_string(), detail };
    let text = payload.trim();
    let text = text
        .strip_prefix("```json")
        .or_else(|| text.strip_prefix("```"))
        .map(|t| t.trim_end().trim_end_matches("```"))
        .unwrap_or(text);
    let detections: Vec<Detection> = serde_json::from_str(text).map_err(|e| mismatch(e.to_string()))?;
    for (i, d) in detections.iter().enumerate() {
        if d.label.trim().is_empty() {
            return Err(mismatch(format!("detection {i} has an empty label")));
        }
        if !(d.score.is_finite() && (0.0..=1.0).contains(&d.score)) {
            return Err(mismatch(format!("detection {i} score {} outside [0, 1]", d.score)));
        }
        let [x0, y0, x1, y1] = d.bbox;
        let in_unit = d.bbox.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
        if !in_unit || x0 > x1 || y0 > y1 {
            return Err(mismatch(format!("detection {i} box {:?} is not a normalized (x0, y0, x1, y1)", d.bbox)));
        }
    }
    Ok(detections)
}

fn confidences(ds: &[&Detection]) -> String {
    ds.iter().map(|d| format!("{:.2}", d.score)).collect::<Vec<_>>().join(", ")
}

fn locations(ds: &[&Detection]) -> String {
    ds.iter().map(|d| location_words(&d.bbox)).collect::<Vec<_>>().join(", ")
}

/// Labels in first-appearance order with their detections.
fn by_label(detections: &[Detection]) -> Vec<(String, Vec<&Detection>)> {
    let mut out: Vec<(String, Vec<&Detection>)> = Vec::new();
    for d in detections {
        let key = normalize_answer(&d.label);
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(d),
            None => out.push((key, vec![d])),
        }
    }
    out
}

/// Deterministic English rendering of detections.
///
/// With queries (grounder style), found queries come first in query order,
/// then unrequested labels, then a "no 'x' found" clause per missing query.
/// Without queries (detector style), every label is counted.
pub fn render_detections(queries: &[String], detections: &[Detection]) -> String {
    let groups = by_label(detections);
    let mut clauses = Vec::new();
    if queries.is_empty() {
        for (label, ds) in &groups {
            let noun = if ds.len() == 1 { label.clone() } else { format!("{label}s") };
            clauses.push(format!(
                "{} {noun} (confidence {}) at {}",
                ds.len(),
                confidences(ds),
                locations(ds)
            ));
        }
        if clauses.is_empty() {
            return "No objects detected.".to_string();
        }
        return format!("{}.", clauses.join("; "));
    }

    let wanted: Vec<String> = queries.iter().map(|q| normalize_answer(q)).collect();
    let mut missing = Vec::new();
    for (q, raw) in wanted.iter().zip(queries) {
        match groups.iter().find(|(l, _)| l == q) {
            Some((_, ds)) => clauses.push(format!(
                "Found {} '{}' (confidence {}) at {}",
                ds.len(),
                raw.trim(),
                confidences(ds),
                locations(ds)
            )),
            None => missing.push(format!("no '{}' found", raw.trim())),
        }
    }
    for (label, ds) in &groups {
        if !wanted.contains(label) {
            clauses.push(format!("Found {} '{label}' (confidence {}) at {}", ds.len(), confidences(ds), locations(ds)));
        }
    }
    clauses.extend(missing);
    format!("{}.", clauses.join("; "))
}

/// Turn a structured detection payload into an evidence statement.
pub fn postprocess_structured(tool: &str, queries: &[String], payload: &str) -> Result<String, ToolError> {
    Ok(render_detections(queries, &parse_detections(tool, payload)?))
}

/// Evidence and call log for one invocation.
#[derive(Debug)]
pub struct ToolRun {
    pub output: ExpertOutput,
    pub calls: Vec<CallRecord>,
}

fn run_invocation(
    gateway: &Gateway,
    registry: &ToolRegistry,
    inv: &ToolInvocation,
    image: &ImagePayload,
    question: &str,
) -> ToolRun {
    let fail = |e: &str| ExpertOutput::failed(&inv.tool_name, inv.arguments.clone(), &inv.disagreement, e);
    let Some(desc) = registry.get(&inv.tool_name) else {
        return ToolRun { output: fail("tool is not registered"), calls: vec![] };
    };
    let args = if inv.arguments.is_empty() { "(none)".to_string() } else { inv.arguments.join(", ") };
    match &desc.backend {
        ToolBackend::Unbound => ToolRun { output: fail("tool has no backend"), calls: vec![] },
        ToolBackend::Custom(exec) => {
            let output = match exec.execute(image, question, &inv.arguments) {
                Ok(ToolReply::Text(t)) if !t.trim().is_empty() => {
                    ExpertOutput::text(&inv.tool_name, inv.arguments.clone(), &inv.disagreement, t.trim())
                }
                Ok(ToolReply::Text(_)) => fail("tool returned empty text"),
                Ok(ToolReply::Detections(ds)) => ExpertOutput {
                    evidence_text: render_detections(&inv.arguments, &ds),
                    structured_payload: Some(ds),
                    ..ExpertOutput::text(&inv.tool_name, inv.arguments.clone(), &inv.disagreement, "")
                },
                Err(e) => fail(&e),
            };
            ToolRun { output, calls: vec![] }
        }
        ToolBackend::Model { endpoint_id, template } => {
            let prompt = render(template, &[("question", question), ("arguments", &args)]);
            let request = ChatRequest::user(prompt).with_image(image.clone()).with_timeout(desc.timeout);
            let record = call(gateway, endpoint_id, &request);
            let output = match &record.reply {
                Ok(r) if !r.text.trim().is_empty() => {
                    ExpertOutput::text(&inv.tool_name, inv.arguments.clone(), &inv.disagreement, r.text.trim())
                }
                Ok(_) => fail("tool returned empty text"),
                Err(e) => fail(&e.to_string()),
            };
            ToolRun { output, calls: vec![record] }
        }
        ToolBackend::Structured { endpoint_id } => {
            let prompt = serde_json::json!({
                "tool": inv.tool_name,
                "question": question,
                "queries": inv.arguments,
            })
            .to_string();
            let request = ChatRequest::user(prompt).with_image(image.clone()).with_timeout(desc.timeout);
            let record = call(gateway, endpoint_id, &request);
            let output = match &record.reply {
                Ok(r) => match parse_detections(&inv.tool_name, &r.text) {
                    Ok(ds) => ExpertOutput {
                        evidence_text: render_detections(&inv.arguments, &ds),
                        structured_payload: Some(ds),
                        ..ExpertOutput::text(&inv.tool_name, inv.arguments.clone(), &inv.disagreement, "")
                    },
                    Err(e) => fail(&e.to_string()),
                },
                Err(e) => fail(&e.to_string()),
            };
            ToolRun { output, calls: vec![record] }
        }
    }
}

/// Run every invocation of `plan`; one output per invocation in plan order.
/// Per-tool failures become `succeeded = false` entries.
pub fn execute_plan(
    gateway: &Gateway,
    registry: &ToolRegistry,
    plan: &ToolPlan,
    image: &ImagePayload,
    question: &str,
) -> Vec<ToolRun> {
    let lane = |inv: &ToolInvocation| match registry.get(&inv.tool_name).map(|d| &d.backend) {
        Some(ToolBackend::Model { endpoint_id, .. }) | Some(ToolBackend::Structured { endpoint_id }) => {
            gateway.lane(endpoint_id)
        }
        _ => None,
    };
    parallel::map_in_lanes(&plan.invocations, lane, |_, inv| run_invocation(gateway, registry, inv, image, question))
}

/// Endpoints a registry's tools may contact.
pub fn tool_endpoints(registry: &ToolRegistry) -> HashSet<String> {
    registry
        .tools
        .iter()
        .filter_map(|t| match &t.backend {
            ToolBackend::Model { endpoint_id, .. } | ToolBackend::Structured { endpoint_id } => Some(endpoint_id.clone()),
            _ => None,
        })
        .collect()
}
