//! Disagreement detection and tool-plan validation.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::answering::{render_grouped, GroupedSolutions};
use crate::exchange::{ask_with_reprompt, CallRecord, ExchangeFailure, JSON_NUDGE};
use crate::gateway::{ChatRequest, Gateway};
use crate::prompts::{PromptSet, TemplateKind};
use crate::tools::{InputKind, ToolRegistry};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub tool_name: String,
    pub disagreement: String,
    pub justification: String,
    pub arguments: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolPlan {
    pub invocations: Vec<ToolInvocation>,
}

impl ToolPlan {
    pub fn len(&self) -> usize {
        self.invocations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.invocations.is_empty()
    }

    pub fn tool_names(&self) -> Vec<&str> {
        self.invocations.iter().map(|i| i.tool_name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("reply contains no JSON object")]
    NotAStructuredDocument,
    #[error("document has no \"experts\" list")]
    MissingExpertsKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedPlan {
    pub plan: ToolPlan,
    pub warnings: Vec<String>,
}

/// Index of the `}` matching the `{` at `start`, honoring JSON strings.
fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// The first balanced `{…}` in `text` that parses as a JSON object, so prose
/// and code fences around the document are ignored.
pub fn extract_json_object(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(offset) = text[from..].find('{') {
        let start = from + offset;
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text[start..=end]) {
                return Some(v);
            }
        }
        from = start + 1;
    }
    None
}

fn string_field(obj: Option<&Value>, key: &str, tool: &str, warnings: &mut Vec<String>) -> String {
    match obj.and_then(|o| o.get(key)) {
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Null) | None => {
            warnings.push(format!("`{tool}` has no {key}"));
            String::new()
        }
        Some(other) => {
            warnings.push(format!("`{tool}` {key} is not a string"));
            other.to_string()
        }
    }
}

fn arguments_field(obj: Option<&Value>, tool: &str, warnings: &mut Vec<String>) -> Vec<String> {
    let raw: Vec<String> = match obj.and_then(|o| o.get("arguments")) {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|v| match v {
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                _ => {
                    warnings.push(format!("`{tool}` argument {v} dropped: not a string"));
                    None
                }
            })
            .collect(),
        Some(other) => {
            warnings.push(format!("`{tool}` arguments {other} dropped: not a list"));
            Vec::new()
        }
    };
    raw.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn inputs_for<'a>(inputs: Option<&'a serde_json::Map<String, Value>>, tool: &str) -> Option<&'a Value> {
    let inputs = inputs?;
    inputs
        .get(tool)
        .or_else(|| inputs.iter().find(|(k, _)| k.trim().eq_ignore_ascii_case(tool)).map(|(_, v)| v))
        .filter(|v| v.is_object())
}

/// Validate a recruiter reply into a [`ToolPlan`].
///
/// Unknown tools are dropped, arguments given to no-input tools are
/// discarded, and repeated experts are merged (argument lists unioned in
/// order). Each repair is reported as a warning.
pub fn validate_tool_plan(raw_document: &str, registry: &ToolRegistry) -> Result<ValidatedPlan, PlanError> {
    let doc = extract_json_object(raw_document).ok_or(PlanError::NotAStructuredDocument)?;
    let mut warnings = Vec::new();
    let experts: Vec<&Value> = match doc.get("experts") {
        Some(Value::Array(items)) => items.iter().collect(),
        Some(v @ Value::String(_)) => {
            warnings.push("\"experts\" is a single string".into());
            vec![v]
        }
        _ => return Err(PlanError::MissingExpertsKey),
    };
    let inputs = doc.get("inputs").and_then(Value::as_object);

    let mut plan = ToolPlan::default();
    for entry in experts {
        let Some(name) = entry.as_str().map(|s| s.trim().to_lowercase()) else {
            warnings.push(format!("expert entry {entry} dropped: not a string"));
            continue;
        };
        let Some(desc) = registry.get(&name) else {
            warnings.push(format!("unknown tool `{name}` dropped"));
            continue;
        };
        let obj = inputs_for(inputs, &name);
        if obj.is_none() {
            warnings.push(format!("`{name}` has no inputs entry"));
        }
        let disagreement = string_field(obj, "disagreement", &name, &mut warnings);
        let justification = string_field(obj, "justification", &name, &mut warnings);
        let mut arguments = arguments_field(obj, &name, &mut warnings);
        if desc.input_kind == InputKind::None && !arguments.is_empty() {
            warnings.push(format!("`{name}` takes no input; arguments {arguments:?} discarded"));
            arguments.clear();
        }
        match plan.invocations.iter_mut().find(|i| i.tool_name == name) {
            Some(existing) => {
                warnings.push(format!("duplicate expert `{name}` merged"));
                for a in arguments {
                    if !existing.arguments.contains(&a) {
                        existing.arguments.push(a);
                    }
                }
            }
            None => plan.invocations.push(ToolInvocation { tool_name: name, disagreement, justification, arguments }),
        }
    }
    if let Some(inputs) = inputs {
        for key in inputs.keys() {
            let k = key.trim().to_lowercase();
            if registry.contains(&k) && !plan.invocations.iter().any(|i| i.tool_name == k) {
                warnings.push(format!("inputs for `{k}` ignored: not listed in \"experts\""));
            }
        }
    }
    Ok(ValidatedPlan { plan, warnings })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementReport {
    pub unanimous: bool,
    pub group_count: usize,
    pub plan: Option<ToolPlan>,
    pub warnings: Vec<String>,
    /// The recruiter never produced a valid document; the plan is empty.
    pub parse_failed: bool,
}

#[derive(Debug)]
pub struct Recruitment {
    pub report: DisagreementReport,
    pub calls: Vec<CallRecord>,
}

pub fn recruit_prompt(
    prompts: &PromptSet,
    grouped: &GroupedSolutions,
    question: &str,
    registry: &ToolRegistry,
) -> String {
    let initial = prompts.render(TemplateKind::Initial, &[("question", question)]);
    let grouped_text = render_grouped(grouped, None);
    let experts = registry.render_expert_list();
    prompts.render(
        TemplateKind::Recruit,
        &[
            ("initial_prompt", initial.as_str()),
            ("grouped_solution", grouped_text.as_str()),
            ("expert_list", experts.as_str()),
            ("question", question),
        ],
    )
}

/// Ask the recruiter for a tool plan. A unanimous grouping short-circuits
/// without any call. After the reprompt budget the plan is empty.
pub fn recruit_tools(
    gateway: &Gateway,
    prompts: &PromptSet,
    grouped: &GroupedSolutions,
    question: &str,
    recruiter: &str,
    registry: &ToolRegistry,
    reprompts: u32,
) -> Result<Recruitment, ExchangeFailure> {
    let group_count = grouped.groups.len();
    if grouped.is_unanimous() {
        return Ok(Recruitment {
            report: DisagreementReport {
                unanimous: true,
                group_count,
                plan: None,
                warnings: vec![],
                parse_failed: false,
            },
            calls: vec![],
        });
    }
    let request = ChatRequest::user(recruit_prompt(prompts, grouped, question, registry));
    let r = ask_with_reprompt(gateway, recruiter, request, reprompts, JSON_NUDGE, |t| validate_tool_plan(t, registry))?;
    let report = match r.parsed {
        Some(v) => DisagreementReport {
            unanimous: false,
            group_count,
            plan: Some(v.plan),
            warnings: v.warnings,
            parse_failed: false,
        },
        None => {
            tracing::warn!("recruiter reply unparseable; continuing without tools");
            DisagreementReport {
                unanimous: false,
                group_count,
                plan: Some(ToolPlan::default()),
                warnings: vec!["recruiter reply could not be parsed; no tools called".into()],
                parse_failed: true,
            }
        }
    };
    Ok(Recruitment { report, calls: r.calls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answering::{group_solutions, AgentAnswer, Stage};
    use crate::gateway::{EndpointProfile, MockEntry, RoleHint};
    use crate::tools::{builtin_descriptor, ToolDescriptor};

    pub(crate) const WORKED_EXAMPLE: &str = r#"{
  "experts": ["grounder", "attribute", "ocr"],
  "inputs": {
    "grounder": {
      "disagreement": "Agent 1 mentioned that there is a cat, but Agent 2 said there is no cat and instead said it is a dog.",
      "justification": "The grounder will help resolve the disagreement about the presence of a cat or dog in the image.",
      "arguments": ["cat", "dog"]
    },
    "attribute": {
      "disagreement": "Agent 1 said the flower is red, Agent 2 said it is orange, and Agent 3 did not specifically mention anything about the flower. There also was confusion about the details of the car.",
      "justification": "The attribute expert will help resolve the disagreement about the color of the flower and provide details about the car.",
      "arguments": ["flower", "car"]
    },
    "ocr": {
      "disagreement": "Agents conflict on the text they see in the image.",
      "justification": "The OCR expert will see the text in the image and resolve the disagreement.",
      "arguments": []
    }
  }
}"#;

    fn grouped(answers: &[&str]) -> GroupedSolutions {
        let a: Vec<_> = answers
            .iter()
            .enumerate()
            .map(|(i, s)| AgentAnswer {
                agent_id: format!("a{i}"),
                answer: s.to_string(),
                reasoning: "r".into(),
                confidence: 0.5,
                raw_text: String::new(),
                parse_fallback_used: false,
            })
            .collect();
        group_solutions(&a, Stage::Initial)
    }

    #[test]
    fn worked_example_validates() {
        let v = validate_tool_plan(&format!("Here you go:\n```json\n{WORKED_EXAMPLE}\n```"), &ToolRegistry::standard())
            .unwrap();
        assert_eq!(v.plan.tool_names(), vec!["grounder", "attribute", "ocr"]);
        assert_eq!(v.plan.invocations[0].arguments, vec!["cat", "dog"]);
        assert!(v.plan.invocations[2].arguments.is_empty());
        assert!(v.warnings.is_empty(), "{:?}", v.warnings);
    }

    #[test]
    fn minimal_document() {
        let v = validate_tool_plan(
            r#"{"experts":["spatial"],"inputs":{"spatial":{"disagreement":"d","justification":"j","arguments":["flag"]}}}"#,
            &ToolRegistry::standard(),
        )
        .unwrap();
        assert_eq!(v.plan.len(), 1);
    }

    #[test]
    fn unknown_tool_dropped_with_warning() {
        let v = validate_tool_plan(r#"{"experts":["depth","ocr"],"inputs":{}}"#, &ToolRegistry::standard()).unwrap();
        assert_eq!(v.plan.tool_names(), vec!["ocr"]);
        assert!(v.warnings.iter().any(|w| w.contains("unknown tool `depth`")));
    }

    #[test]
    fn no_input_tool_loses_arguments() {
        let v = validate_tool_plan(
            r#"{"experts":["detector"],"inputs":{"detector":{"disagreement":"d","justification":"j","arguments":["car"]}}}"#,
            &ToolRegistry::standard(),
        )
        .unwrap();
        assert!(v.plan.invocations[0].arguments.is_empty());
        assert!(v.warnings.iter().any(|w| w.contains("takes no input")));
    }

    #[test]
    fn duplicates_merge() {
        let v = validate_tool_plan(r#"{"experts":["ocr","ocr"]}"#, &ToolRegistry::standard()).unwrap();
        assert_eq!(v.plan.tool_names(), vec!["ocr"]);
        let v = validate_tool_plan(
            r#"{"experts":["grounder","GROUNDER"],"inputs":{"grounder":{"arguments":["cat","dog"]}}}"#,
            &ToolRegistry::standard(),
        )
        .unwrap();
        assert_eq!(v.plan.invocations.len(), 1);
        assert_eq!(v.plan.invocations[0].arguments, vec!["cat", "dog"]);
    }

    #[test]
    fn structural_errors() {
        assert_eq!(validate_tool_plan("no json here", &ToolRegistry::standard()), Err(PlanError::NotAStructuredDocument));
        assert_eq!(validate_tool_plan("[1,2]", &ToolRegistry::standard()), Err(PlanError::NotAStructuredDocument));
        assert_eq!(validate_tool_plan(r#"{"tools":[]}"#, &ToolRegistry::standard()), Err(PlanError::MissingExpertsKey));
    }

    #[test]
    fn registered_extra_tool_is_accepted() {
        let mut r = ToolRegistry::standard();
        r.register(ToolDescriptor::new("medical", InputKind::QueryList, "list. findings", "Reads medical scans."), false)
            .unwrap();
        let v = validate_tool_plan(
            r#"{"experts":["medical"],"inputs":{"medical":{"disagreement":"d","justification":"j","arguments":["lesion"]}}}"#,
            &r,
        )
        .unwrap();
        assert_eq!(v.plan.invocations[0].arguments, vec!["lesion"]);
        assert!(validate_tool_plan(r#"{"experts":["medical"]}"#, &ToolRegistry::standard()).unwrap().plan.is_empty());
    }

    #[test]
    fn extraction_skips_braces_in_prose_and_strings() {
        let v = extract_json_object(r#"set {x} then {"a": "}{", "b": {"c": 1}} trailing"#).unwrap();
        assert_eq!(v["a"], "}{");
        assert_eq!(v["b"]["c"], 1);
    }

    fn recruiter_gateway(script: Vec<MockEntry>) -> Gateway {
        let g = Gateway::new([EndpointProfile::mock("rec", RoleHint::Recruiter)]).unwrap();
        g.register_mock_script("rec", script).unwrap();
        g
    }

    #[test]
    fn unanimous_fast_path_makes_no_call() {
        let g = recruiter_gateway(vec![]);
        let r = recruit_tools(&g, &PromptSet::default(), &grouped(&["x", "X."]), "q", "rec", &ToolRegistry::standard(), 1)
            .unwrap();
        assert!(r.report.unanimous);
        assert!(r.report.plan.is_none());
        assert!(r.calls.is_empty());
        assert_eq!(g.ledger().totals().calls, 0);
    }

    #[test]
    fn recruiter_worked_example() {
        let g = recruiter_gateway(vec![WORKED_EXAMPLE.into()]);
        let r = recruit_tools(&g, &PromptSet::default(), &grouped(&["cat", "dog"]), "What animal?", "rec", &ToolRegistry::standard(), 1)
            .unwrap();
        let plan = r.report.plan.unwrap();
        assert_eq!(plan.tool_names(), vec!["grounder", "attribute", "ocr"]);
        let prompt = &r.calls[0].prompt;
        assert!(prompt.starts_with("Here was the initial prompt: What animal?\n\nAnswer the question"));
        assert!(prompt.contains("Answer: cat (1 agent)"));
        assert!(prompt.contains(&builtin_descriptor("reasoning").unwrap().expert_line()));
        assert!(prompt.ends_with("Reminder, the question is: What animal?"));
        assert!(!r.calls[0].has_image);
    }

    #[test]
    fn recruiter_garbage_yields_empty_plan() {
        let g = recruiter_gateway(vec!["nope".into(), "still nope".into()]);
        let r = recruit_tools(&g, &PromptSet::default(), &grouped(&["a", "b"]), "q", "rec", &ToolRegistry::standard(), 1)
            .unwrap();
        assert!(r.report.parse_failed);
        assert!(r.report.plan.unwrap().is_empty());
        assert_eq!(r.calls.len(), 2);
    }
}
