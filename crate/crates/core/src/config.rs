//! Run configuration: one JSON document with `${VAR}` interpolation.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::answering::{AgentFailurePolicy, AgentSpec};
use crate::debate::{single_model_agents, Ablations, Orchestrator, PipelineSettings, RepromptBudgets, Roles};
use crate::gateway::{EndpointProfile, Gateway, MockEntry};
use crate::prompts::{PromptError, PromptSet, TemplateKind};
use crate::tools::{builtin_descriptor, default_tool_template, InputKind, ToolBackend, ToolDescriptor, ToolRegistry};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("environment variable `{0}` referenced by the config is not set")]
    MissingEnv(String),
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl ConfigError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid { field: field.into(), reason: reason.into() }
    }

    /// The offending field, for referential errors.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    #[serde(flatten)]
    pub profile: EndpointProfile,
    /// Default FIFO script of a mock endpoint.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mock_script: Vec<MockEntry>,
    /// Scripts selected by a substring of the request text, e.g. a question id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mock_keyed_scripts: BTreeMap<String, Vec<MockEntry>>,
}

/// An answerer given as an endpoint id or a full agent spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswererConfig {
    Endpoint(String),
    Agent(AgentSpec),
}

impl AnswererConfig {
    pub fn spec(&self) -> AgentSpec {
        match self {
            AnswererConfig::Endpoint(id) => AgentSpec::new(id.clone(), id.clone()),
            AnswererConfig::Agent(a) => a.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToolBackendConfig {
    Model {
        endpoint_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        template: Option<String>,
    },
    Structured {
        endpoint_id: String,
    },
    Unbound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolConfig {
    pub name: String,
    #[serde(default = "unbound")]
    pub backend: ToolBackendConfig,
    /// Required for tools outside the standard seven.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_kind: Option<InputKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
}

fn unbound() -> ToolBackendConfig {
    ToolBackendConfig::Unbound
}

fn default_rounds() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_workers() -> usize {
    4
}

fn default_single_model_temperature() -> f32 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub endpoints: Vec<EndpointConfig>,
    pub answerers: Vec<AnswererConfig>,
    pub recruiter: String,
    pub scorer: String,
    pub aggregator: String,
    /// Omitted: the seven standard tools, unbound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<ToolConfig>>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_true")]
    pub short_circuit_unanimous: bool,
    #[serde(default)]
    pub ablation: Ablations,
    #[serde(default = "default_single_model_temperature")]
    pub single_model_temperature: f32,
    #[serde(default)]
    pub run_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub failure_policy: AgentFailurePolicy,
    #[serde(default)]
    pub reprompts: RepromptBudgets,
    /// Template name → file path, relative to the config's directory.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prompt_overrides: BTreeMap<String, String>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// The document as written, before interpolation.
    #[serde(skip)]
    pub source_text: String,
}

/// Replace every `${VAR}` with the variable's value, JSON-escaped so it can
/// sit inside a string literal.
pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, ConfigError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else {
            out.push_str(&rest[start..]);
            return Ok(out);
        };
        let name = &after[..end];
        let value = lookup(name).ok_or_else(|| ConfigError::MissingEnv(name.to_string()))?;
        let quoted = serde_json::to_string(&value)?;
        out.push_str(&quoted[1..quoted.len() - 1]);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let expanded = interpolate_env(text, |k| std::env::var(k).ok())?;
        let raw: Value = serde_json::from_str(&expanded)?;
        let mut cfg: RunConfig = serde_json::from_value(raw.clone())?;
        // mocks retry instantly unless a backoff is given explicitly
        if let Some(eps) = raw.get("endpoints").and_then(Value::as_array) {
            for (ep, e) in cfg.endpoints.iter_mut().zip(eps) {
                if ep.profile.is_mock() && e.get("backoff_base_ms").is_none() {
                    ep.profile.backoff_base_ms = 0;
                }
            }
        }
        cfg.base_dir = base_dir.to_path_buf();
        cfg.source_text = text.to_string();
        Ok(cfg)
    }

    fn endpoint_ids(&self) -> HashSet<&str> {
        self.endpoints.iter().map(|e| e.profile.endpoint_id.as_str()).collect()
    }

    pub fn agents(&self) -> Vec<AgentSpec> {
        let specs: Vec<AgentSpec> = self.answerers.iter().map(AnswererConfig::spec).collect();
        if self.ablation.single_model {
            if let Some(first) = specs.first() {
                return single_model_agents(&first.endpoint_id, specs.len(), self.single_model_temperature);
            }
        }
        specs
    }

    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            rounds: self.rounds,
            short_circuit_unanimous: self.short_circuit_unanimous,
            run_seed: self.run_seed,
            reprompts: self.reprompts,
            failure_policy: self.failure_policy,
            ablations: self.ablation.clone(),
        }
    }

    /// Static checks: referential integrity, ranges, prompt overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        for (i, e) in self.endpoints.iter().enumerate() {
            if !seen.insert(e.profile.endpoint_id.as_str()) {
                return Err(ConfigError::invalid(format!("endpoints[{i}].endpoint_id"), format!("duplicate id `{}`", e.profile.endpoint_id)));
            }
            e.profile.validate().map_err(|err| ConfigError::invalid(format!("endpoints[{i}]"), err.to_string()))?;
            if !e.profile.is_mock() && (!e.mock_script.is_empty() || !e.mock_keyed_scripts.is_empty()) {
                return Err(ConfigError::invalid(format!("endpoints[{i}].mock_script"), "scripts need a mock backend"));
            }
        }
        let ids = self.endpoint_ids();
        let known = |field: String, id: &str| {
            if ids.contains(id) {
                Ok(())
            } else {
                Err(ConfigError::invalid(field, format!("unknown endpoint id `{id}`")))
            }
        };
        if self.answerers.is_empty() {
            return Err(ConfigError::invalid("answerers", "at least one answerer is required"));
        }
        let mut agent_ids = HashSet::new();
        for (i, a) in self.answerers.iter().enumerate() {
            let spec = a.spec();
            known(format!("answerers[{i}]"), &spec.endpoint_id)?;
            if !agent_ids.insert(spec.agent_id.clone()) {
                return Err(ConfigError::invalid(format!("answerers[{i}]"), format!("duplicate agent id `{}`", spec.agent_id)));
            }
        }
        known("recruiter".into(), &self.recruiter)?;
        known("scorer".into(), &self.scorer)?;
        known("aggregator".into(), &self.aggregator)?;
        if self.rounds == 0 {
            return Err(ConfigError::invalid("rounds", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(ConfigError::invalid("workers", "must be at least 1"));
        }
        if !(self.single_model_temperature.is_finite() && (0.0..=2.0).contains(&self.single_model_temperature)) {
            return Err(ConfigError::invalid("single_model_temperature", "must lie in [0, 2]"));
        }
        let registry = self.registry()?;
        for (i, t) in self.ablation.withheld_tools.iter().enumerate() {
            if !registry.contains(t) {
                return Err(ConfigError::invalid(format!("ablation.withheld_tools[{i}]"), format!("`{t}` is not a registered tool")));
            }
        }
        self.prompts()?;
        Ok(())
    }

    pub fn registry(&self) -> Result<ToolRegistry, ConfigError> {
        let Some(tools) = &self.tools else {
            return Ok(ToolRegistry::standard());
        };
        let ids = self.endpoint_ids();
        let mut registry = ToolRegistry::new();
        for (i, t) in tools.iter().enumerate() {
            let field = |f: &str| format!("tools[{i}].{f}");
            let name = t.name.trim().to_lowercase();
            let mut desc = match builtin_descriptor(&name) {
                Some(d) => d,
                None => {
                    let missing = |f: &str| ConfigError::invalid(field(f), format!("required for non-standard tool `{name}`"));
                    ToolDescriptor::new(
                        name.clone(),
                        t.input_kind.ok_or_else(|| missing("input_kind"))?,
                        t.input_description.clone().ok_or_else(|| missing("input_description"))?,
                        t.capability.clone().ok_or_else(|| missing("capability"))?,
                    )
                }
            };
            if let Some(k) = t.input_kind {
                desc.input_kind = k;
            }
            if let Some(d) = &t.input_description {
                desc.input_description = d.clone();
            }
            if let Some(c) = &t.capability {
                desc.capability_sentence = c.clone();
            }
            if let Some(ms) = t.timeout_ms {
                desc.timeout = Duration::from_millis(ms);
            }
            let backend = match &t.backend {
                ToolBackendConfig::Model { endpoint_id, template } => {
                    if !ids.contains(endpoint_id.as_str()) {
                        return Err(ConfigError::invalid(field("backend.endpoint_id"), format!("unknown endpoint id `{endpoint_id}`")));
                    }
                    ToolBackend::Model {
                        endpoint_id: endpoint_id.clone(),
                        template: template.clone().unwrap_or_else(|| default_tool_template(&name)),
                    }
                }
                ToolBackendConfig::Structured { endpoint_id } => {
                    if !ids.contains(endpoint_id.as_str()) {
                        return Err(ConfigError::invalid(field("backend.endpoint_id"), format!("unknown endpoint id `{endpoint_id}`")));
                    }
                    ToolBackend::Structured { endpoint_id: endpoint_id.clone() }
                }
                ToolBackendConfig::Unbound => ToolBackend::Unbound,
            };
            registry
                .register(desc.with_backend(backend), false)
                .map_err(|e| ConfigError::invalid(field("name"), e.to_string()))?;
        }
        Ok(registry)
    }

    pub fn prompts(&self) -> Result<PromptSet, ConfigError> {
        for name in self.prompt_overrides.keys() {
            if TemplateKind::from_name(name).is_none() {
                return Err(ConfigError::invalid(format!("prompt_overrides.{name}"), "unknown template name"));
            }
        }
        Ok(PromptSet::default().with_overrides(&self.prompt_overrides, &self.base_dir)?)
    }

    /// Gateway with every endpoint registered and mock scripts loaded.
    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let gateway = Gateway::new(self.endpoints.iter().map(|e| e.profile.clone()))
            .map_err(|e| ConfigError::invalid("endpoints", e.to_string()))?;
        for e in &self.endpoints {
            let id = &e.profile.endpoint_id;
            if !e.mock_script.is_empty() {
                gateway
                    .register_mock_script(id, e.mock_script.clone())
                    .map_err(|err| ConfigError::invalid("endpoints", err.to_string()))?;
            }
            for (key, script) in &e.mock_keyed_scripts {
                gateway
                    .register_mock_keyed_script(id, key.clone(), script.clone())
                    .map_err(|err| ConfigError::invalid("endpoints", err.to_string()))?;
            }
        }
        Ok(gateway)
    }

    pub fn build(&self) -> Result<Orchestrator, ConfigError> {
        self.validate()?;
        let roles = Roles {
            agents: self.agents(),
            recruiter: self.recruiter.clone(),
            scorer: self.scorer.clone(),
            aggregator: self.aggregator.clone(),
        };
        Orchestrator::new(self.gateway()?, self.registry()?, self.prompts()?, roles, self.settings())
            .map_err(|e| ConfigError::invalid("pipeline", e.to_string()))
    }
}
