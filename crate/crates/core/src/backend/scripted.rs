use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{cache_key, BackendError, ChatBackend, ChatRequest, Purpose};

/// Conditions a request must satisfy for a rule to fire. Absent fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<Purpose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
}

impl ScriptMatch {
    pub fn matches(&self, r: &ChatRequest) -> bool {
        self.purpose.is_none_or(|p| p == r.purpose)
            && self.claim_id.as_deref().is_none_or(|c| r.claim_id.as_deref() == Some(c))
            && self.sample_index.is_none_or(|i| i == r.params.sample_index)
            && self.prompt_contains.as_deref().is_none_or(|s| r.prompt.contains(s))
            && self.template_id.as_deref().is_none_or(|t| t == r.params.prompt_template_id)
            && self.attempt.is_none_or(|a| a == r.attempt)
    }
}

/// One line of a script file: `{"match": {...}, "reply": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match", default)]
    pub when: ScriptMatch,
    pub reply: String,
}

/// Answers from an ordered rule list; the first matching rule wins.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedBackend { rules }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            rules.push(rule);
        }
        Ok(ScriptedBackend { rules })
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.rules.iter().find(|rule| rule.when.matches(request)).map(|rule| rule.reply.clone()).ok_or_else(|| {
            BackendError::ScriptMiss(format!(
                "purpose={} claim_id={} sample_index={} template={} attempt={} key={}",
                request.purpose,
                request.claim_id.as_deref().unwrap_or("-"),
                request.params.sample_index,
                request.params.prompt_template_id,
                request.attempt,
                cache_key(request),
            ))
        })
    }
}
