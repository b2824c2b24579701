//! Visual question answering over lake images through an external service.
//!
//! Wire format: `POST {url}` with `{"question": ..., "image_path": ...}` (path mode,
//! the absolute path of the resolved image) or `{"question": ..., "image_b64": ...}`
//! (inline mode). Reply: `{"answer": ..., "confidence": ...}` with optional confidence.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::decode_context;
use crate::literal;
use crate::llm::Condition;
use crate::tools::{
    required_text, ArgSpec, Args, Tool, ToolContext, ToolDescriptor, ToolError, ToolOutput, ValueType,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub question: String,
    /// Lake-relative path as found in the data.
    pub image_path: String,
    /// Absolute path inside the media root.
    pub resolved: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaAnswer {
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VqaError {
    #[error("VQA transport error: {0}")]
    Transport(String),
    #[error("VQA service error: {0}")]
    Service(String),
    #[error("no answer for question {question:?} on {image}")]
    NoAnswer { question: String, image: String },
}

#[async_trait]
pub trait VqaClient: Send + Sync {
    async fn ask(&self, request: &VqaRequest) -> Result<VqaAnswer, VqaError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VqaMode {
    #[default]
    Path,
    Inline,
}

#[derive(Debug, Clone)]
pub struct HttpVqaClient {
    url: String,
    mode: VqaMode,
    client: reqwest::Client,
}

impl HttpVqaClient {
    pub fn new(url: impl Into<String>, mode: VqaMode, timeout: Duration) -> Result<Self, VqaError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| VqaError::Transport(e.to_string()))?;
        Ok(Self {
            url: url.into(),
            mode,
            client,
        })
    }
}

#[async_trait]
impl VqaClient for HttpVqaClient {
    async fn ask(&self, request: &VqaRequest) -> Result<VqaAnswer, VqaError> {
        let body = match self.mode {
            VqaMode::Path => json!({
                "question": request.question,
                "image_path": request.resolved.to_string_lossy(),
            }),
            VqaMode::Inline => {
                let bytes = tokio::fs::read(&request.resolved)
                    .await
                    .map_err(|e| VqaError::Transport(format!("{}: {e}", request.resolved.display())))?;
                json!({
                    "question": request.question,
                    "image_b64": base64::engine::general_purpose::STANDARD.encode(bytes),
                })
            }
        };
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .await
            .map_err(|e| VqaError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(VqaError::Service(format!("{status}: {text}")));
        }
        resp.json::<VqaAnswer>()
            .await
            .map_err(|e| VqaError::Service(format!("malformed reply: {e}")))
    }
}

/// One scripted answer: `question` condition plus image path suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqaEntry {
    pub question: Condition,
    pub image: String,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default)]
    pub confidence: Option<f64>,
    /// Scripted failure instead of an answer.
    #[serde(default)]
    pub error: Option<String>,
}

/// Fixture table (`vqa.json`): `{"entries": [...], "default": "no"}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VqaTable {
    pub entries: Vec<VqaEntry>,
    #[serde(default)]
    pub default: Option<String>,
}

impl VqaTable {
    pub fn load(path: &Path) -> Result<Self, VqaError> {
        let text = std::fs::read_to_string(path).map_err(|e| VqaError::Transport(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| VqaError::Service(format!("{}: {e}", path.display())))
    }

    /// Looks up by question and by image path (`image_path` ends with the entry's image).
    pub fn lookup(&self, question: &str, image_path: &str) -> Result<VqaAnswer, VqaError> {
        let hit = self.entries.iter().find(|e| {
            e.question.holds(question) && Path::new(image_path).ends_with(&e.image)
        });
        match hit {
            Some(VqaEntry { error: Some(msg), .. }) => Err(VqaError::Service(msg.clone())),
            Some(VqaEntry {
                answer: Some(a),
                confidence,
                ..
            }) => Ok(VqaAnswer {
                answer: a.clone(),
                confidence: *confidence,
            }),
            _ => match &self.default {
                Some(d) => Ok(VqaAnswer {
                    answer: d.clone(),
                    confidence: None,
                }),
                None => Err(VqaError::NoAnswer {
                    question: question.to_string(),
                    image: image_path.to_string(),
                }),
            },
        }
    }
}

/// In-process VQA answering from a fixture table.
#[derive(Debug, Clone, Default)]
pub struct ScriptedVqa {
    table: VqaTable,
}

impl ScriptedVqa {
    pub fn new(table: VqaTable) -> Self {
        Self { table }
    }
}

#[async_trait]
impl VqaClient for ScriptedVqa {
    async fn ask(&self, request: &VqaRequest) -> Result<VqaAnswer, VqaError> {
        self.table.lookup(&request.question, &request.image_path)
    }
}

pub struct ImageAnalysis {
    descriptor: ToolDescriptor,
    client: Arc<dyn VqaClient>,
}

const DESCRIPTION: &str = " - Answers a question about each image referenced in `context`, using a visual question answering model.
 - `context` must be the output of a previous action that contains image paths (an `img_path` or `image_path` field), or a list of image paths.
 - `question` is asked of every image separately and must be a textual question about a single image, e.g. \"Does the image depict war?\".
 - Returns the input rows with an added `answer` field, in input order.";

const PATH_KEYS: [&str; 5] = ["img_path", "image_path", "image", "path", "img"];
const IMAGE_EXTS: [&str; 6] = [".jpg", ".jpeg", ".png", ".gif", ".bmp", ".webp"];

fn looks_like_image(s: &str) -> bool {
    let lower = s.to_ascii_lowercase();
    IMAGE_EXTS.iter().any(|e| lower.ends_with(e))
}

/// One image to analyse, with the row it came from.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ImageItem {
    pub row: Map<String, Value>,
    pub path: String,
}

fn item_from_row(row: &Map<String, Value>) -> Option<ImageItem> {
    let path = PATH_KEYS
        .iter()
        .find_map(|k| row.get(*k).and_then(Value::as_str))
        .or_else(|| row.values().filter_map(Value::as_str).find(|s| looks_like_image(s)))?;
    Some(ImageItem {
        row: row.clone(),
        path: path.to_string(),
    })
}

/// Collects image references from an upstream value, preserving order.
pub(crate) fn image_items(context: &Value) -> Result<Vec<ImageItem>, ToolError> {
    let value = decode_context(context);
    let mut out = Vec::new();
    match &value {
        Value::Array(items) => {
            for (i, item) in items.iter().enumerate() {
                match item {
                    Value::Object(row) => out.push(item_from_row(row).ok_or_else(|| {
                        ToolError::new(format!("context row {i} has no image path"))
                    })?),
                    Value::String(s) => out.push(ImageItem {
                        row: Map::from_iter([("image_path".to_string(), Value::from(s.as_str()))]),
                        path: s.clone(),
                    }),
                    other => return Err(ToolError::new(format!("context item {i} is not an image reference: {other}"))),
                }
            }
        }
        Value::Object(row) => {
            out.push(item_from_row(row).ok_or_else(|| ToolError::new("context has no image path"))?)
        }
        Value::String(s) if looks_like_image(s.trim()) => out.push(ImageItem {
            row: Map::from_iter([("image_path".to_string(), Value::from(s.trim()))]),
            path: s.trim().to_string(),
        }),
        Value::String(s) => {
            // text with an embedded list, e.g. "images from [...]"
            match literal::first_list(s) {
                Some(list) => return image_items(&Value::Array(list)),
                None => return Err(ToolError::new("context contains no image paths")),
            }
        }
        Value::Null => {}
        other => return Err(ToolError::new(format!("context is not an image reference: {other}"))),
    }
    Ok(out)
}

impl ImageAnalysis {
    pub fn new(client: Arc<dyn VqaClient>) -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                "image_analysis",
                DESCRIPTION,
                vec![
                    ArgSpec::required("question", ValueType::Text),
                    ArgSpec::required("context", ValueType::Structured),
                ],
                ValueType::Structured,
            ),
            client,
        }
    }
}

#[async_trait]
impl Tool for ImageAnalysis {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    async fn run(&self, args: &Args, ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        let question = required_text(args, "question")?;
        let items = image_items(args.get("context").unwrap_or(&Value::Null))?;
        let lake = ctx.lake()?;

        let mut set = tokio::task::JoinSet::new();
        let mut outcomes: Vec<Option<Result<VqaAnswer, String>>> = vec![None; items.len()];
        for (idx, item) in items.iter().enumerate() {
            let resolved = match lake.resolve_media(&item.path) {
                Ok(p) => p,
                Err(e) => {
                    outcomes[idx] = Some(Err(e.to_string()));
                    continue;
                }
            };
            let client = Arc::clone(&self.client);
            let request = VqaRequest {
                question: question.clone(),
                image_path: item.path.clone(),
                resolved,
            };
            set.spawn(async move { (idx, client.ask(&request).await.map_err(|e| e.to_string())) });
        }
        while let Some(joined) = set.join_next().await {
            let (idx, outcome) = joined.map_err(|e| ToolError::new(format!("VQA task failed: {e}")))?;
            outcomes[idx] = Some(outcome);
        }

        let mut rows = Vec::with_capacity(items.len());
        let mut failures = Vec::new();
        for (item, outcome) in items.into_iter().zip(outcomes) {
            let mut row = item.row;
            match outcome.expect("every item has an outcome") {
                Ok(a) => {
                    row.insert("answer".into(), Value::from(a.answer));
                    if let Some(c) = a.confidence {
                        row.insert("confidence".into(), json!(c));
                    }
                }
                Err(msg) => {
                    row.insert("answer".into(), Value::Null);
                    row.insert("error".into(), Value::from(msg.clone()));
                    failures.push(format!("{}: {msg}", item.path));
                }
            }
            rows.push(Value::Object(row));
        }
        if !rows.is_empty() && failures.len() == rows.len() {
            return Err(ToolError::new(format!(
                "all {} images failed; first error: {}",
                rows.len(),
                failures[0]
            )));
        }
        let reasoning = format!(
            "Asked {:?} for {} image(s); {} failed.",
            question,
            rows.len(),
            failures.len()
        );
        let details = if failures.is_empty() { Value::Null } else { json!({ "failures": failures }) };
        Ok(ToolOutput::new(Value::Array(rows), reasoning).with_details(details))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::testkit;
    use crate::plan_dsl::TaskId;

    fn table() -> VqaTable {
        serde_json::from_value(json!({
            "entries": [
                {"question": "Does the image depict war?", "image": "images/img_0.jpg", "answer": "yes"},
                {"question": "Does the image depict war?", "image": "images/img_1.jpg", "answer": "no"},
                {"question": "Does the image depict war?", "image": "images/img_2.jpg", "answer": "no"},
                {"question": {"contains": "specifically"}, "image": "images/img_0.jpg", "answer": "umbrellas"},
                {"question": "broken", "image": "images/img_1.jpg", "error": "model crashed"}
            ]
        }))
        .unwrap()
    }

    fn args(question: &str, context: Value) -> Args {
        [("question".to_string(), Value::from(question)), ("context".to_string(), context)]
            .into_iter()
            .collect()
    }

    async fn run(question: &str, context: Value) -> Result<ToolOutput, ToolError> {
        let dir = tempfile::tempdir().unwrap();
        let lake = testkit::lake(dir.path());
        let tool = ImageAnalysis::new(Arc::new(ScriptedVqa::new(table())));
        let ctx = ToolContext::new(TaskId(2), dir.path().into()).with_lake(lake);
        tool.run(&args(question, context), &ctx).await
    }

    #[tokio::test]
    async fn answers_follow_input_order() {
        let ctx = json!([{"img_path": "images/img_0.jpg"}, {"img_path": "images/img_1.jpg"}, {"img_path": "images/img_2.jpg"}]);
        let out = run("Does the image depict war?", ctx).await.unwrap();
        let answers: Vec<&str> = out.answer.as_array().unwrap().iter().map(|r| r["answer"].as_str().unwrap()).collect();
        assert_eq!(answers, ["yes", "no", "no"]);
    }

    #[tokio::test]
    async fn single_image_and_empty_list() {
        let out = run("What is specifically depicted in the painting?", json!([{"img_path": "images/img_0.jpg", "year": "1438"}]))
            .await
            .unwrap();
        assert_eq!(out.answer, json!([{"img_path": "images/img_0.jpg", "year": "1438", "answer": "umbrellas"}]));
        assert_eq!(run("q", json!([])).await.unwrap().answer, json!([]));
    }

    #[tokio::test]
    async fn per_item_failure_is_isolated() {
        let ctx = json!(["images/img_1.jpg", "../secret.jpg"]);
        let err = run("broken", ctx).await.unwrap_err();
        assert!(err.message.starts_with("all 2 images failed"));

        let ctx = json!(["images/img_0.jpg", "../secret.jpg", "images/img_2.jpg"]);
        let out = run("Does the image depict war?", ctx).await.unwrap();
        let rows = out.answer.as_array().unwrap();
        assert_eq!(rows[0]["answer"], "yes");
        assert!(rows[1]["error"].as_str().unwrap().contains("escapes"));
        assert_eq!(rows[2]["answer"], "no");
    }

    #[test]
    fn items_from_serialized_context() {
        let text = Value::from("[{'title': 'A', 'img_path': 'images/img_0.jpg'}]");
        assert_eq!(image_items(&text).unwrap()[0].path, "images/img_0.jpg");
        let prose = Value::from("images: ['images/img_1.jpg']");
        assert_eq!(image_items(&prose).unwrap()[0].path, "images/img_1.jpg");
        assert!(image_items(&json!([{"title": "no path"}])).is_err());
    }
}
