use async_trait::async_trait;
use serde_json::{json, Map, Value};

use super::{decode_context, feedback_text};
use crate::literal;
use crate::llm::{TemplateId, Vars};
use crate::tools::{
    required_text, value_text, ArgSpec, Args, Tool, ToolContext, ToolDescriptor, ToolError, ToolOutput,
    ValueType,
};

pub struct TextAnalysis {
    descriptor: ToolDescriptor,
}

impl Default for TextAnalysis {
    fn default() -> Self {
        Self::new()
    }
}

const DESCRIPTION: &str = " - Answers a question about text documents such as game reports.
 - `context` is a document path, the document text itself, or the output of a previous action whose rows carry a `report_path` (or `doc_path`) field.
 - The question is answered separately for each document; use None when a document does not contain the answer.
 - Returns {'reasoning', 'answer'} for a single document, or the input rows with an added `answer` field.";

const DOC_KEYS: [&str; 4] = ["report_path", "doc_path", "document_path", "path"];
const TEXT_KEYS: [&str; 3] = ["report", "text", "document"];

/// A document to read: the row it came from and where its text lives.
enum Doc {
    Inline(String),
    Path(String),
}

impl TextAnalysis {
    pub fn new() -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                "text_analysis",
                DESCRIPTION,
                vec![
                    ArgSpec::required("question", ValueType::Text),
                    ArgSpec::required("context", ValueType::Structured),
                ],
                ValueType::Structured,
            ),
        }
    }

    async fn attempt(&self, args: &Args, ctx: &ToolContext, errors: &[String]) -> Result<ToolOutput, ToolError> {
        let question = required_text(args, "question")?;
        let context = decode_context(args.get("context").unwrap_or(&Value::Null));
        match &context {
            Value::Array(rows) => {
                let mut out = Vec::with_capacity(rows.len());
                let mut reasons = Vec::new();
                for (i, row) in rows.iter().enumerate() {
                    let (mut map, doc) = match row {
                        Value::Object(m) => (m.clone(), doc_from_row(m).ok_or_else(|| {
                            ToolError::new(format!("context row {i} has no document"))
                        })?),
                        other => (Map::new(), doc_from_text(&value_text(other))),
                    };
                    let text = read(ctx, &doc)?;
                    let (reasoning, answer) = self.ask(ctx, &question, &text, errors).await?;
                    map.insert("answer".into(), answer);
                    reasons.push(reasoning);
                    out.push(Value::Object(map));
                }
                Ok(ToolOutput::new(Value::Array(out), reasons.join("\n")))
            }
            Value::Object(m) => {
                let doc = doc_from_row(m).ok_or_else(|| ToolError::new("context has no document"))?;
                let text = read(ctx, &doc)?;
                let (reasoning, answer) = self.ask(ctx, &question, &text, errors).await?;
                Ok(ToolOutput::new(json!({"reasoning": reasoning, "answer": answer}), reasoning))
            }
            Value::Null => Err(ToolError::new("argument 'context' is empty")),
            other => {
                let text = read(ctx, &doc_from_text(&value_text(other)))?;
                let (reasoning, answer) = self.ask(ctx, &question, &text, errors).await?;
                Ok(ToolOutput::new(json!({"reasoning": reasoning, "answer": answer}), reasoning))
            }
        }
    }

    async fn ask(
        &self,
        ctx: &ToolContext,
        question: &str,
        text: &str,
        errors: &[String],
    ) -> Result<(String, Value), ToolError> {
        if text.trim().is_empty() {
            return Err(ToolError::new("document is empty"));
        }
        let mut vars = Vars::new();
        vars.insert("question".into(), question.to_string());
        vars.insert("input".into(), text.to_string());
        vars.insert("feedback".into(), feedback_text(errors));
        let response = ctx.complete(TemplateId::TextAnalysis, &vars).await?;
        let map = literal::first_map(&response.text).ok_or_else(|| {
            ToolError::new(format!(
                "malformed output, expected {{'reasoning': ..., 'answer': ...}}: {}",
                response.text.trim()
            ))
        })?;
        let get = |k: &str| map.iter().find(|(key, _)| key.eq_ignore_ascii_case(k)).map(|(_, v)| v.clone());
        let answer = get("answer").ok_or_else(|| ToolError::new("malformed output: missing 'answer'"))?;
        let reasoning = get("reasoning").map(|v| value_text(&v)).unwrap_or_default();
        // the prompt asks for the literal None when nothing is found
        let answer = if answer.is_null() { Value::from("None") } else { answer };
        Ok((reasoning, answer))
    }
}

fn doc_from_row(row: &Map<String, Value>) -> Option<Doc> {
    if let Some(p) = DOC_KEYS.iter().find_map(|k| row.get(*k).and_then(Value::as_str)) {
        return Some(Doc::Path(p.to_string()));
    }
    TEXT_KEYS
        .iter()
        .find_map(|k| row.get(*k).and_then(Value::as_str))
        .map(|t| Doc::Inline(t.to_string()))
}

fn doc_from_text(text: &str) -> Doc {
    let t = text.trim();
    let single_line = !t.contains('\n') && !t.contains(' ');
    if single_line && (t.ends_with(".txt") || t.ends_with(".md")) {
        Doc::Path(t.to_string())
    } else {
        Doc::Inline(text.to_string())
    }
}

fn read(ctx: &ToolContext, doc: &Doc) -> Result<String, ToolError> {
    match doc {
        Doc::Inline(t) => Ok(t.clone()),
        Doc::Path(p) => Ok(ctx.lake()?.read_document(p)?),
    }
}

#[async_trait]
impl Tool for TextAnalysis {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    async fn run(&self, args: &Args, ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        self.attempt(args, ctx, &[]).await
    }

    async fn repair(&self, args: &Args, ctx: &ToolContext, errors: &[String]) -> Result<ToolOutput, ToolError> {
        self.attempt(args, ctx, errors).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::testkit;
    use crate::plan_dsl::TaskId;
    use crate::tools::{invoke_with_selfdebug, NodeStatus, SelfDebugPolicy};

    fn args(question: &str, context: Value) -> Args {
        [("question".to_string(), Value::from(question)), ("context".to_string(), context)]
            .into_iter()
            .collect()
    }

    const SCRIPT: &str = r#"{"entries": [
        {"template": "text_analysis", "on": {"input": {"contains": "Player X scored 4"}}, "responses": ["{'reasoning': 'The report says 4.', 'answer': '4'}"]},
        {"template": "text_analysis", "on": {"input": {"contains": "Player Y"}}, "responses": ["{'reasoning': 'Player X is not mentioned.', 'answer': None}"]},
        {"template": "text_analysis", "on": {"input": {"contains": "garbled"}}, "responses": ["I think it is four.", "{'reasoning': 'r', 'answer': '4'}"]}
    ]}"#;

    async fn invoke(a: Args) -> crate::tools::NodeResult {
        let dir = tempfile::tempdir().unwrap();
        let ctx = ToolContext::new(TaskId(1), dir.path().into())
            .with_lake(testkit::lake(dir.path()))
            .with_gateway(testkit::gateway(SCRIPT));
        invoke_with_selfdebug(&TextAnalysis::new(), &a, &ctx, SelfDebugPolicy::default()).await
    }

    #[tokio::test]
    async fn document_path_answer() {
        let r = invoke(args("three-pointers by player X", json!("game_1.txt"))).await;
        assert_eq!(r.answer, json!({"reasoning": "The report says 4.", "answer": "4"}));
    }

    #[tokio::test]
    async fn unanswerable_is_none_and_rows_keep_order() {
        let ctx = json!([{"game": 1, "report_path": "game_1.txt"}, {"game": 2, "report_path": "game_2.txt"}]);
        let r = invoke(args("three-pointers by player X", ctx)).await;
        assert_eq!(
            r.answer,
            json!([{"game": 1, "report_path": "game_1.txt", "answer": "4"}, {"game": 2, "report_path": "game_2.txt", "answer": "None"}])
        );
    }

    #[tokio::test]
    async fn malformed_output_repaired_once() {
        let r = invoke(args("q", json!("some garbled report text"))).await;
        assert_eq!((r.status, r.attempts), (NodeStatus::Success, 2));
    }

    #[tokio::test]
    async fn empty_question_rejected() {
        let r = invoke(args("  ", json!("text"))).await;
        assert_eq!(r.status, NodeStatus::Error);
        assert!(r.error_message.unwrap().contains("'question' is empty"));
    }
}
