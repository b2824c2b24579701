use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::literal;

/// Key names of the structured final answer, in output order.
pub const FINAL_ANSWER_KEYS: [&str; 5] = ["Summary", "details", "source", "inference", "extra explanation"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Inference {
    Text(String),
    List(Vec<Value>),
}

impl Inference {
    fn from_value(v: Value) -> Self {
        match v {
            Value::String(s) => Inference::Text(s),
            Value::Array(items) => Inference::List(items),
            Value::Null => Inference::Text("None".into()),
            other => Inference::Text(other.to_string()),
        }
    }

    /// Flattened text form used for answer comparison.
    pub fn as_text(&self) -> String {
        match self {
            Inference::Text(s) => s.clone(),
            Inference::List(items) => items.iter().map(value_text).collect::<Vec<_>>().join(", "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAnswer {
    #[serde(rename = "Summary")]
    pub summary: String,
    pub details: String,
    pub source: String,
    pub inference: Inference,
    #[serde(rename = "extra explanation")]
    pub extra_explanation: String,
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace(['_', '-'], " ")
}

impl FinalAnswer {
    /// Builds the answer from a decoded map; key matching ignores case and `_`/space.
    /// On failure returns the missing key names.
    pub fn from_map(map: &Map<String, Value>) -> Result<Self, Vec<String>> {
        let get = |key: &str| {
            let want = normalize_key(key);
            map.iter().find(|(k, _)| normalize_key(k) == want).map(|(_, v)| v.clone())
        };
        let missing: Vec<String> = FINAL_ANSWER_KEYS
            .iter()
            .filter(|k| get(k).is_none())
            .map(|k| k.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(missing);
        }
        let text = |k: &str| value_text(&get(k).unwrap_or(Value::Null));
        Ok(FinalAnswer {
            summary: text("Summary"),
            details: text("details"),
            source: text("source"),
            inference: Inference::from_value(get("inference").unwrap_or(Value::Null)),
            extra_explanation: text("extra explanation"),
        })
    }
}

/// Outcome of the decision stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Decision {
    Finish { answer: FinalAnswer },
    Replan { reason: String },
}

/// Raw interpretation of one decision completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParsedDecision {
    Finish { thought: String, answer: FinalAnswer },
    /// Finish was chosen but the structured answer lacks keys.
    Incomplete {
        thought: String,
        missing: Vec<String>,
        partial: Map<String, Value>,
    },
    Replan { thought: String, reason: String },
    Malformed { error: String },
}

fn strip_decoration(s: &str) -> &str {
    s.trim().trim_matches(|c: char| c == '*' || c == '`' || c.is_whitespace())
}

fn find_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_ascii_lowercase().find(&needle.to_ascii_lowercase())
}

/// Interprets `Thought: ... Action: Finish(...) | Replan(...)` output.
pub fn parse_decision(text: &str) -> ParsedDecision {
    let action_at = find_ci(text, "action:");
    let thought = match (find_ci(text, "thought:"), action_at) {
        (Some(t), Some(a)) if t < a => text[t + "thought:".len()..a].trim().to_string(),
        (Some(t), None) => text[t + "thought:".len()..].trim().to_string(),
        _ => String::new(),
    };
    let action = match action_at {
        Some(a) => strip_decoration(&text[a + "action:".len()..]),
        None => strip_decoration(text),
    };
    let lower = action.to_ascii_lowercase();
    if lower.starts_with("finish") {
        return finish(thought, action, text);
    }
    if lower.starts_with("replan") {
        return replan(thought, action);
    }
    // no usable Action line: look for the verbs anywhere
    if let Some(i) = find_ci(text, "finish(") {
        return finish(thought, &text[i..], text);
    }
    if let Some(i) = find_ci(text, "replan(") {
        return replan(thought, &text[i..]);
    }
    ParsedDecision::Malformed {
        error: "response names neither Finish nor Replan".into(),
    }
}

fn finish(thought: String, action: &str, whole: &str) -> ParsedDecision {
    let map = literal::first_map(action).or_else(|| literal::first_map(whole));
    match map {
        Some(map) => match FinalAnswer::from_map(&map) {
            Ok(answer) => ParsedDecision::Finish { thought, answer },
            Err(missing) => ParsedDecision::Incomplete {
                thought,
                missing,
                partial: map,
            },
        },
        None => ParsedDecision::Incomplete {
            thought,
            missing: FINAL_ANSWER_KEYS.iter().map(|k| k.to_string()).collect(),
            partial: Map::new(),
        },
    }
}

fn replan(thought: String, action: &str) -> ParsedDecision {
    let body = action["replan".len()..].trim();
    let body = body
        .strip_prefix('(')
        .map(|b| b.rfind(')').map_or(b, |end| &b[..end]))
        .unwrap_or(body)
        .trim();
    let reason = if body.is_empty() { thought.clone() } else { body.to_string() };
    ParsedDecision::Replan { thought, reason }
}
