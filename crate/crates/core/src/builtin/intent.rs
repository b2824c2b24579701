use async_trait::async_trait;
use serde_json::{json, Value};

use crate::literal;
use crate::llm::{TemplateId, Vars};
use crate::tools::{
    required_text, text_arg, ArgSpec, Args, Tool, ToolContext, ToolDescriptor, ToolError, ToolOutput, ValueType,
};

/// Picks the tables relevant to a question, to keep text2SQL prompts small on
/// wide schemas.
pub struct IntentTables {
    descriptor: ToolDescriptor,
}

impl Default for IntentTables {
    fn default() -> Self {
        Self::new()
    }
}

const DESCRIPTION: &str = " - Selects the database tables relevant to a problem.
 - Use it before text2SQL when the schema has many tables, and pass its output as the text2SQL `context`.
 - Returns a list of table names.";

impl IntentTables {
    pub fn new() -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                "intent_tables",
                DESCRIPTION,
                vec![
                    ArgSpec::required("problem", ValueType::Text),
                    ArgSpec::optional("context", ValueType::Structured),
                ],
                ValueType::List,
            ),
        }
    }
}

#[async_trait]
impl Tool for IntentTables {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    async fn run(&self, args: &Args, ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        let problem = required_text(args, "problem")?;
        let catalog = ctx.lake()?.schema_catalog();
        let all: Vec<String> = catalog.table_names().into_iter().map(str::to_string).collect();
        if all.is_empty() {
            return Err(ToolError::new("the database has no tables"));
        }
        if all.len() == 1 {
            return Ok(ToolOutput::new(json!(all), "The database has a single table."));
        }
        let mut vars = Vars::new();
        vars.insert("problem".into(), problem);
        vars.insert(
            "context".into(),
            text_arg(args, "context").map(|c| format!("Context: {c}")).unwrap_or_default(),
        );
        vars.insert("schema".into(), catalog.render_compact());
        let response = ctx.complete(TemplateId::IntentTables, &vars).await?;
        let chosen: Vec<String> = literal::first_list(&response.text)
            .unwrap_or_default()
            .iter()
            .filter_map(Value::as_str)
            .filter_map(|name| catalog.table(name).map(|t| t.name.clone()))
            .fold(Vec::new(), |mut acc, n| {
                if !acc.contains(&n) {
                    acc.push(n);
                }
                acc
            });
        if chosen.is_empty() {
            tracing::warn!(task = %ctx.task_id, "table selection unusable, falling back to the full schema");
            return Ok(ToolOutput::new(
                json!(all),
                "Table selection could not be read; using every table.",
            )
            .with_details(json!({"fallback": true, "raw": response.text})));
        }
        Ok(ToolOutput::new(json!(chosen), "Selected tables relevant to the problem."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lake::{DataLake, LakeManifest};
    use crate::plan_dsl::TaskId;
    use std::sync::Arc;

    fn ehr_like(dir: &std::path::Path) -> Arc<DataLake> {
        let db = dir.join("ehr.db");
        rusqlite::Connection::open(&db)
            .unwrap()
            .execute_batch(
                "CREATE TABLE patients(subject_id INTEGER);
                 CREATE TABLE prescriptions(subject_id INTEGER, drug TEXT);
                 CREATE TABLE tb_cxr(subject_id INTEGER, study_id INTEGER);",
            )
            .unwrap();
        Arc::new(
            DataLake::open(&LakeManifest {
                name: "ehr".into(),
                db_path: db,
                media_root: None,
                docs_root: None,
            })
            .unwrap(),
        )
    }

    fn args() -> Args {
        [("problem".to_string(), Value::from("acetaminophen and chest x-ray"))].into_iter().collect()
    }

    #[tokio::test]
    async fn selection_filters_unknown_names() {
        let dir = tempfile::tempdir().unwrap();
        let gw = crate::builtin::testkit::gateway(
            r#"{"entries": [{"template": "intent_tables", "responses": ["[\"prescriptions\", \"TB_CXR\", \"imaginary\"]"]}]}"#,
        );
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_lake(ehr_like(dir.path())).with_gateway(gw);
        let out = IntentTables::new().run(&args(), &ctx).await.unwrap();
        assert_eq!(out.answer, json!(["prescriptions", "tb_cxr"]));
    }

    #[tokio::test]
    async fn malformed_selection_falls_back() {
        let dir = tempfile::tempdir().unwrap();
        let gw = crate::builtin::testkit::gateway(r#"{"entries": [{"template": "intent_tables", "responses": ["all of them"]}]}"#);
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_lake(ehr_like(dir.path())).with_gateway(gw);
        let out = IntentTables::new().run(&args(), &ctx).await.unwrap();
        assert_eq!(out.answer, json!(["patients", "prescriptions", "tb_cxr"]));
        assert_eq!(out.details["fallback"], json!(true));
    }

    #[tokio::test]
    async fn single_table_needs_no_model() {
        let dir = tempfile::tempdir().unwrap();
        let lake = crate::builtin::testkit::lake(dir.path());
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_lake(lake);
        let out = IntentTables::new().run(&args(), &ctx).await.unwrap();
        assert_eq!(out.answer, json!(["paintings"]));
        assert_eq!(ctx.usage().1, 0);
    }
}
