use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{decode_context, feedback_text, fenced_block, parse_structure, SandboxClient, SandboxRequest};
use crate::llm::{TemplateId, Vars};
use crate::tools::{
    required_text, value_text, ArgSpec, Args, Tool, ToolContext, ToolDescriptor, ToolError, ToolOutput,
    ValueType,
};

/// How the prepared structure is produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrepMode {
    /// The model answers with the structure itself; the engine saves it.
    #[default]
    Direct,
    /// The model writes a script that the external sandbox runs.
    Script,
}

pub struct DataPreparation {
    descriptor: ToolDescriptor,
    mode: PrepMode,
    sandbox: Option<Arc<SandboxClient>>,
}

const DESCRIPTION: &str = " - Groups, counts, filters or reshapes the outputs of previous actions into the final data structure that answers the question.
 - `context` must hold the outputs of previous actions, e.g. $2 or [$2, $3].
 - Use it before data_plotting, or whenever results from several actions must be combined.
 - Returns the prepared structure and saves it to a file.";

const DIRECT_FORMAT: &str = "Output the final data structure only, as JSON, with no code and no explanation.";

const SCRIPT_FORMAT: &str = "Output one Python script in a ```python``` block. The input data is available as the variable INPUTS and the output directory as ARTIFACT_DIR. Print the final data structure as JSON.";

impl DataPreparation {
    pub fn new(mode: PrepMode, sandbox: Option<Arc<SandboxClient>>) -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                "data_preparation",
                DESCRIPTION,
                vec![
                    ArgSpec::required("question", ValueType::Text),
                    ArgSpec::required("context", ValueType::Structured),
                ],
                ValueType::Structured,
            ),
            mode,
            sandbox,
        }
    }

    pub fn mode(&self) -> PrepMode {
        self.mode
    }

    async fn attempt(&self, args: &Args, ctx: &ToolContext, errors: &[String]) -> Result<ToolOutput, ToolError> {
        let question = required_text(args, "question")?;
        let inputs = decode_context(args.get("context").unwrap_or(&Value::Null));
        if inputs.is_null() {
            return Err(ToolError::new("argument 'context' is empty"));
        }
        let mut vars = Vars::new();
        vars.insert("question".into(), question);
        vars.insert("input".into(), format!("Input data: {}", value_text(&inputs)));
        vars.insert("feedback".into(), feedback_text(errors));
        let format = match self.mode {
            PrepMode::Direct => DIRECT_FORMAT,
            PrepMode::Script => SCRIPT_FORMAT,
        };
        vars.insert("output_format".into(), format.into());
        let response = ctx.complete(TemplateId::DataPreparation, &vars).await?;
        match self.mode {
            PrepMode::Direct => direct(ctx, &response.text),
            PrepMode::Script => self.script(ctx, &response.text, inputs).await,
        }
    }

    async fn script(&self, ctx: &ToolContext, text: &str, inputs: Value) -> Result<ToolOutput, ToolError> {
        let sandbox = self
            .sandbox
            .as_ref()
            .ok_or_else(|| ToolError::new("script mode needs a sandbox endpoint"))?;
        let script = fenced_block(text, Some("python"))
            .ok_or_else(|| ToolError::new("response contains no ```python``` block"))?;
        let reply = sandbox
            .run(&SandboxRequest {
                script: script.to_string(),
                inputs,
                artifact_dir: ctx.artifact_dir.clone(),
            })
            .await?;
        if reply.stdout_structure.is_null() {
            return Err(ToolError::new("script printed no data structure"));
        }
        Ok(ToolOutput::new(reply.stdout_structure, "Prepared by script.")
            .with_details(json!({"files": reply.files, "script": script})))
    }
}

fn direct(ctx: &ToolContext, text: &str) -> Result<ToolOutput, ToolError> {
    let data = parse_structure(text).ok_or_else(|| {
        ToolError::new(format!("malformed output, expected a JSON data structure: {}", text.trim()))
    })?;
    std::fs::create_dir_all(&ctx.artifact_dir)
        .map_err(|e| ToolError::new(format!("{}: {e}", ctx.artifact_dir.display())))?;
    let path = ctx.artifact_dir.join(format!("task_{}_data.json", ctx.task_id.0));
    let body = serde_json::to_string_pretty(&data).expect("json value serializes");
    std::fs::write(&path, body).map_err(|e| ToolError::new(format!("{}: {e}", path.display())))?;
    Ok(ToolOutput::new(data, "Prepared the final data structure.")
        .with_details(json!({"path": path.to_string_lossy()})))
}

#[async_trait]
impl Tool for DataPreparation {
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

    #[tokio::test]
    async fn direct_mode_persists_reloadable_value() {
        let dir = tempfile::tempdir().unwrap();
        let gw = testkit::gateway(
            r#"{"entries": [{"template": "data_preparation", "responses": ["```json\n{\"16th\": 1, \"18th\": 2}\n```"]}]}"#,
        );
        let ctx = ToolContext::new(TaskId(3), dir.path().into()).with_gateway(gw);
        let tool = DataPreparation::new(PrepMode::Direct, None);
        let r = invoke_with_selfdebug(&tool, &args("count per century", json!([{"century": "16th"}])), &ctx, SelfDebugPolicy::default()).await;
        assert_eq!(r.status, NodeStatus::Success);
        assert_eq!(r.answer, json!({"16th": 1, "18th": 2}));
        let saved = std::fs::read_to_string(dir.path().join("task_3_data.json")).unwrap();
        assert_eq!(serde_json::from_str::<Value>(&saved).unwrap(), r.answer);
    }

    #[tokio::test]
    async fn identity_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let map = json!({"a": 1, "b": [1, 2]});
        let gw = testkit::gateway(&json!({"entries": [{"template": "data_preparation", "responses": [map.to_string()]}]}).to_string());
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_gateway(gw);
        let out = DataPreparation::new(PrepMode::Direct, None).run(&args("keep as is", map.clone()), &ctx).await.unwrap();
        assert_eq!(out.answer, map);
    }

    #[tokio::test]
    async fn malformed_twice_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let gw = testkit::gateway(r#"{"entries": [{"template": "data_preparation", "responses": ["Please replan."]}]}"#);
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_gateway(gw);
        let r = invoke_with_selfdebug(&DataPreparation::new(PrepMode::Direct, None), &args("q", json!([1])), &ctx, SelfDebugPolicy::default()).await;
        assert_eq!((r.status, r.attempts), (NodeStatus::Error, 2));
        assert!(r.error_message.unwrap().starts_with("malformed output"));
    }

    #[tokio::test]
    async fn script_mode_without_sandbox_fails() {
        let dir = tempfile::tempdir().unwrap();
        let gw = testkit::gateway(r#"{"entries": [{"template": "data_preparation", "responses": ["```python\nprint(1)\n```"]}]}"#);
        let ctx = ToolContext::new(TaskId(1), dir.path().into()).with_gateway(gw);
        let err = DataPreparation::new(PrepMode::Script, None).run(&args("q", json!([1])), &ctx).await.unwrap_err();
        assert!(err.message.contains("sandbox"));
    }
}
