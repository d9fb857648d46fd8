//! Prompt templates for every pipeline stage.
//!
//! Templates are plain text with `<name>` placeholders. The shipped set lives
//! in `prompts/*.txt`; any template can be replaced per run from a file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown prompt template `{0}`")]
    UnknownTemplate(String),
    #[error("prompt template `{template}` is missing placeholder <{placeholder}>")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("cannot read prompt override {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Initial,
    Recruit,
    Agreement,
    Discussion,
    Aggregator,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 5] = [
        TemplateKind::Initial,
        TemplateKind::Recruit,
        TemplateKind::Agreement,
        TemplateKind::Discussion,
        TemplateKind::Aggregator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Initial => "initial",
            TemplateKind::Recruit => "recruit",
            TemplateKind::Agreement => "agreement",
            TemplateKind::Discussion => "discussion",
            TemplateKind::Aggregator => "aggregator",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Placeholders a replacement template must keep.
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateKind::Initial => &["question"],
            TemplateKind::Recruit => &["grouped_solution", "expert_list", "question"],
            TemplateKind::Agreement => &["disagreement", "expert_output", "agent_output"],
            TemplateKind::Discussion => &["grouped_solutions", "tool_outputs"],
            TemplateKind::Aggregator => &["question", "grouped_output", "tool_outputs"],
        }
    }

    fn shipped(self) -> &'static str {
        match self {
            TemplateKind::Initial => include_str!("../prompts/initial.txt"),
            TemplateKind::Recruit => include_str!("../prompts/recruit.txt"),
            TemplateKind::Agreement => include_str!("../prompts/agreement.txt"),
            TemplateKind::Discussion => include_str!("../prompts/discussion.txt"),
            TemplateKind::Aggregator => include_str!("../prompts/aggregator.txt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<TemplateKind, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let templates = TemplateKind::ALL
            .into_iter()
            .map(|k| (k, k.shipped().trim_end().to_string()))
            .collect();
        Self { templates }
    }
}

impl PromptSet {
    pub fn template(&self, kind: TemplateKind) -> &str {
        &self.templates[&kind]
    }

    pub fn set(&mut self, kind: TemplateKind, template: String) -> Result<(), PromptError> {
        for p in kind.required_placeholders() {
            if !template.contains(&format!("<{p}>")) {
                return Err(PromptError::MissingPlaceholder {
                    template: kind.name().to_string(),
                    placeholder: (*p).to_string(),
                });
            }
        }
        self.templates.insert(kind, template.trim_end().to_string());
        Ok(())
    }

    /// Replace templates from files named by `overrides` (template name → path,
    /// relative paths resolved against `base_dir`).
    pub fn with_overrides(
        mut self,
        overrides: &BTreeMap<String, String>,
        base_dir: &Path,
    ) -> Result<Self, PromptError> {
        for (name, path) in overrides {
            let kind =
                TemplateKind::from_name(name).ok_or_else(|| PromptError::UnknownTemplate(name.clone()))?;
            let full = base_dir.join(path);
            let text = std::fs::read_to_string(&full).map_err(|source| PromptError::Io {
                path: full.display().to_string(),
                source,
            })?;
            self.set(kind, text)?;
        }
        Ok(self)
    }

    pub fn render(&self, kind: TemplateKind, vars: &[(&str, &str)]) -> String {
        render(self.template(kind), vars)
    }
}

/// Single-pass substitution of `<key>` placeholders. Substituted values are
/// never rescanned, so placeholder-like text inside a value stays literal.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('<') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (key, value) in vars {
            let tag_len = key.len() + 2;
            if tail.len() >= tag_len
                && tail.as_bytes()[tag_len - 1] == b'>'
                && tail.get(1..tag_len - 1) == Some(*key)
            {
                out.push_str(value);
                rest = &tail[tag_len..];
                continue 'scan;
            }
        }
        out.push('<');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}
