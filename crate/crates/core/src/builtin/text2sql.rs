use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{decode_context, feedback_text, fenced_block};
use crate::lake::{DataLake, Row};
use crate::literal;
use crate::llm::{TemplateId, Vars};
use crate::tools::{
    required_text, value_text, ArgSpec, Args, Tool, ToolContext, ToolDescriptor, ToolError, ToolOutput,
    ValueType,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlArtifact {
    pub sql: String,
    pub rows: Vec<Row>,
    pub reasoning: String,
}

pub struct Text2Sql {
    descriptor: ToolDescriptor,
}

impl Default for Text2Sql {
    fn default() -> Self {
        Self::new()
    }
}

const DESCRIPTION: &str = " - Translates a natural-language problem into an SQLite query over the database and executes it.
 - `problem` is one textual question. Do not write SQL yourself.
 - Ask for every column later tasks need, such as image paths for image_analysis or years for grouping.
 - `context` may carry outputs of previous actions (for example the table list from intent_tables).
 - Returns the result rows as a list of column-name to value maps.";

impl Text2Sql {
    pub fn new() -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                "text2SQL",
                DESCRIPTION,
                vec![
                    ArgSpec::required("problem", ValueType::Text),
                    ArgSpec::optional("context", ValueType::Structured),
                ],
                ValueType::Structured,
            ),
        }
    }

    async fn attempt(&self, args: &Args, ctx: &ToolContext, errors: &[String]) -> Result<ToolOutput, ToolError> {
        let lake = ctx.lake()?;
        let problem = required_text(args, "problem")?;
        let (context, schema) = context_and_schema(lake, args.get("context"));
        let mut vars = Vars::new();
        vars.insert("problem".into(), problem);
        vars.insert("context".into(), context);
        vars.insert("schema".into(), schema);
        vars.insert("feedback".into(), feedback_text(errors));
        let response = ctx.complete(TemplateId::Text2sql, &vars).await?;
        let (sql, reasoning) = extract_sql(&response.text)
            .ok_or_else(|| ToolError::new("response contains no SQL query"))?;
        let rows = run(lake, &sql).await?;
        let artifact = SqlArtifact { sql, rows, reasoning };
        Ok(ToolOutput::new(
            Value::Array(artifact.rows.iter().cloned().map(Value::Object).collect()),
            artifact.reasoning.clone(),
        )
        .with_details(json!({ "sql": artifact.sql })))
    }
}

async fn run(lake: &DataLake, sql: &str) -> Result<Vec<Row>, ToolError> {
    let lake = lake.clone();
    let query = sql.to_string();
    tokio::task::spawn_blocking(move || lake.run_sql(&query))
        .await
        .map_err(|e| ToolError::new(format!("query task failed: {e}")))?
        .map_err(|e| ToolError::new(format!("SQL error: {e}\nQuery: {sql}")))
}

/// A table-name list (as produced by intent_tables) narrows the schema shown to
/// the model; any other context is passed through as text.
fn context_and_schema(lake: &DataLake, context: Option<&Value>) -> (String, String) {
    let catalog = lake.schema_catalog();
    let Some(raw) = context else {
        return (String::new(), catalog.render_compact());
    };
    let decoded = decode_context(raw);
    if let Value::Array(items) = &decoded {
        let names: Option<Vec<String>> = items
            .iter()
            .map(|v| v.as_str().filter(|s| catalog.table(s).is_some()).map(str::to_string))
            .collect();
        if let Some(names) = names.filter(|n| !n.is_empty()) {
            return (String::new(), catalog.render_subset(Some(&names)));
        }
    }
    (format!("Context: {}", value_text(raw)), catalog.render_compact())
}

/// `{"reasoning", "SQL"}` map, a fenced sql block, or the bare text.
pub(crate) fn extract_sql(text: &str) -> Option<(String, String)> {
    if let Some(map) = literal::first_map(text) {
        let find = |keys: &[&str]| {
            map.iter()
                .find(|(k, _)| keys.iter().any(|want| k.eq_ignore_ascii_case(want)))
                .and_then(|(_, v)| v.as_str().map(str::to_string))
        };
        if let Some(sql) = find(&["sql", "query"]) {
            return Some((sql.trim().to_string(), find(&["reasoning"]).unwrap_or_default()));
        }
    }
    if let Some(body) = fenced_block(text, Some("sql")) {
        let reasoning = text[..text.find("```").unwrap_or(0)].trim().to_string();
        return Some((body.to_string(), reasoning));
    }
    let bare = text.trim();
    (!bare.is_empty()).then(|| (bare.to_string(), String::new()))
}

#[async_trait]
impl Tool for Text2Sql {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    async fn run(&self, args: &Args, ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        self.attempt(args, ctx, &[]).await
    }

    /// Re-prompts with the database error text.
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

    fn args(problem: &str) -> Args {
        [("problem".to_string(), Value::from(problem))].into_iter().collect()
    }

    #[tokio::test]
    async fn oldest_renaissance_row() {
        let dir = tempfile::tempdir().unwrap();
        let lake = testkit::lake(dir.path());
        let sql = "SELECT img_path, strftime('%Y', inception) AS year FROM paintings WHERE movement = 'Renaissance' ORDER BY inception ASC LIMIT 1";
        let gw = testkit::gateway(&json!({"entries": [{"template": "text2sql", "responses": [
            json!({"reasoning": "oldest first", "SQL": sql}).to_string()
        ]}]}).to_string());
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_lake(lake.clone()).with_gateway(gw);
        let r = invoke_with_selfdebug(&Text2Sql::new(), &args("oldest Renaissance painting"), &ctx, SelfDebugPolicy::default()).await;
        assert_eq!(r.status, NodeStatus::Success);
        assert_eq!(r.answer, json!([{"img_path": "images/img_0.jpg", "year": "1438"}]));
        let direct: Vec<Value> = lake.run_sql(sql).unwrap().into_iter().map(Value::Object).collect();
        assert_eq!(serde_json::to_string(&r.answer).unwrap(), serde_json::to_string(&direct).unwrap());
        assert_eq!(r.details["sql"], json!(sql));
    }

    #[tokio::test]
    async fn repair_sees_engine_error() {
        let dir = tempfile::tempdir().unwrap();
        let lake = testkit::lake(dir.path());
        let gw = testkit::gateway(
            r#"{"entries": [
                {"template": "text2sql", "responses": ["SELECT * FROM painting"]},
                {"template": "text2sql", "on": {"feedback": {"contains": "no such table: painting"}}, "responses": ["```sql\nSELECT COUNT(*) AS n FROM paintings\n```"]}
            ]}"#,
        );
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_lake(lake).with_gateway(gw);
        let r = invoke_with_selfdebug(&Text2Sql::new(), &args("count"), &ctx, SelfDebugPolicy::default()).await;
        assert_eq!((r.status, r.attempts, r.llm_calls), (NodeStatus::Success, 2, 2));
        assert_eq!(r.answer, json!([{"n": 3}]));
    }

    #[tokio::test]
    async fn persistent_failure_keeps_engine_message() {
        let dir = tempfile::tempdir().unwrap();
        let lake = testkit::lake(dir.path());
        let gw = testkit::gateway(r#"{"entries": [{"template": "text2sql", "responses": ["SELECT * FROM missing_table"]}]}"#);
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_lake(lake.clone()).with_gateway(gw);
        let r = invoke_with_selfdebug(&Text2Sql::new(), &args("x"), &ctx, SelfDebugPolicy::default()).await;
        assert_eq!((r.status, r.attempts), (NodeStatus::Error, 2));
        let engine = lake.run_sql("SELECT * FROM missing_table").unwrap_err().to_string();
        assert!(r.error_message.unwrap().contains(&engine));
    }

    #[test]
    fn table_list_context_narrows_schema() {
        let dir = tempfile::tempdir().unwrap();
        let lake = testkit::lake(dir.path());
        let (ctx, schema) = context_and_schema(&lake, Some(&json!(["paintings"])));
        assert_eq!(ctx, "");
        assert!(schema.starts_with("paintings("));
        let (ctx, _) = context_and_schema(&lake, Some(&json!("year 1500")));
        assert_eq!(ctx, "Context: year 1500");
    }
}
