//! Deterministic backend answering from a fixture file (`llm.json`).
//!
//! ```json
//! {"entries": [
//!   {"template": "text2sql",
//!    "on": {"problem": {"contains": "oldest"}},
//!    "responses": [{"text": "...", "prompt_tokens": 120, "completion_tokens": 30}, "..."]}
//! ]}
//! ```
//!
//! An entry matches when its template is equal, its optional `fingerprint` equals
//! [`fingerprint`] of the rendered variables, and every `on` condition holds. The
//! most specific match wins (fingerprint first, then condition count, then file
//! order). Each entry replays its `responses` in order and repeats the last one.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendReply, CompletionRequest, LlmBackend, LlmError, TemplateId, Vars};

/// Stable hash of a variable map (keys sorted).
pub fn fingerprint(vars: &Vars) -> String {
    let canonical = serde_json::to_string(vars).expect("string map serializes");
    hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Condition {
    Equals(String),
    Contains { contains: String },
}

impl Condition {
    pub fn holds(&self, value: &str) -> bool {
        match self {
            Condition::Equals(s) => value == s,
            Condition::Contains { contains } => value.contains(contains.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptResponse {
    Text(String),
    Error {
        error: String,
    },
    Full {
        text: String,
        #[serde(default)]
        prompt_tokens: Option<u64>,
        #[serde(default)]
        completion_tokens: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub template: TemplateId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub on: BTreeMap<String, Condition>,
    pub responses: Vec<ScriptResponse>,
}

impl ScriptEntry {
    fn matches(&self, template: TemplateId, vars: &Vars, fp: &str) -> bool {
        self.template == template
            && self.fingerprint.as_deref().is_none_or(|f| f == fp)
            && self
                .on
                .iter()
                .all(|(k, c)| vars.get(k).is_some_and(|v| c.holds(v)))
    }

    fn specificity(&self) -> (bool, usize) {
        (self.fingerprint.is_some(), self.on.len())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Transport(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| LlmError::BadResponse(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    served: Mutex<Vec<usize>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let served = Mutex::new(vec![0; script.entries.len()]);
        Self { script, served }
    }

    /// Loads `llm.json` from a fixture directory.
    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        Script::load(&dir.join("llm.json")).map(Self::new)
    }

    /// Number of completions served per template.
    pub fn calls_by_template(&self) -> BTreeMap<TemplateId, usize> {
        let served = self.served.lock().expect("counter lock");
        let mut out = BTreeMap::new();
        for (entry, n) in self.script.entries.iter().zip(served.iter()) {
            *out.entry(entry.template).or_default() += n;
        }
        out
    }
}

#[async_trait]
impl LlmBackend for ScriptedBackend {
    async fn complete(&self, request: CompletionRequest<'_>) -> Result<BackendReply, LlmError> {
        let fp = fingerprint(request.vars);
        let chosen = self
            .script
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.matches(request.template, request.vars, &fp))
            // max_by_key keeps the last maximum; reverse so file order breaks ties
            .rev()
            .max_by_key(|(_, e)| e.specificity());
        let Some((idx, entry)) = chosen else {
            return Err(LlmError::ScriptMiss {
                template: request.template.to_string(),
                fingerprint: fp,
                vars: request.vars.keys().cloned().collect(),
            });
        };
        let n = {
            let mut served = self.served.lock().expect("counter lock");
            let n = served[idx];
            served[idx] += 1;
            n
        };
        let Some(response) = entry.responses.get(n.min(entry.responses.len().saturating_sub(1))) else {
            return Err(LlmError::BadResponse(format!(
                "script entry {idx} for '{}' has no responses",
                entry.template
            )));
        };
        match response {
            ScriptResponse::Text(text) => Ok(BackendReply {
                text: text.clone(),
                ..Default::default()
            }),
            ScriptResponse::Full {
                text,
                prompt_tokens,
                completion_tokens,
            } => Ok(BackendReply {
                text: text.clone(),
                prompt_tokens: *prompt_tokens,
                completion_tokens: *completion_tokens,
                retry_count: 0,
            }),
            ScriptResponse::Error { error } => Err(LlmError::Transport(error.clone())),
        }
    }
}
