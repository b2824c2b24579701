use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Args, Tool, ToolDescriptor, ToolOutput};
use crate::llm::UsageRecord;
use crate::plan_dsl::TaskId;
use crate::tools::ToolContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Success,
    Error,
}

/// Outcome of one task, as stored in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeResult {
    pub task_id: TaskId,
    pub tool: String,
    pub status: NodeStatus,
    pub answer: Value,
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    pub attempts: u32,
    pub llm_calls: u32,
    pub usage: UsageRecord,
    pub started_us: u64,
    pub ended_us: u64,
}

impl NodeResult {
    pub fn is_success(&self) -> bool {
        self.status == NodeStatus::Success
    }

    /// A result for a task that never ran.
    pub fn not_run(task_id: TaskId, tool: &str, message: impl Into<String>, at_us: u64) -> Self {
        Self {
            task_id,
            tool: tool.to_string(),
            status: NodeStatus::Error,
            answer: Value::Null,
            reasoning: String::new(),
            details: Value::Null,
            error_message: Some(message.into()),
            attempts: 0,
            llm_calls: 0,
            usage: UsageRecord::default(),
            started_us: at_us,
            ended_us: at_us,
        }
    }

    pub fn without_timing(&self) -> NodeResult {
        NodeResult {
            usage: self.usage.without_timing(),
            started_us: 0,
            ended_us: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfDebugPolicy {
    /// Repair attempts after the first failure.
    pub retries: u32,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

impl Default for SelfDebugPolicy {
    fn default() -> Self {
        Self {
            retries: 1,
            timeout: Duration::from_secs(120),
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        f64::deserialize(d).map(Duration::from_secs_f64)
    }
}

/// Argument names must belong to the schema and every required argument must be present.
pub fn check_args(descriptor: &ToolDescriptor, args: &Args) -> Result<(), String> {
    let mut problems = Vec::new();
    for name in args.keys() {
        if descriptor.arg(name).is_none() {
            problems.push(format!("unknown argument '{name}'"));
        }
    }
    for spec in descriptor.args.iter().filter(|a| a.required) {
        if !args.contains_key(&spec.name) {
            problems.push(format!("missing required argument '{}'", spec.name));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(format!("{}: {}", descriptor.name, problems.join("; ")))
    }
}

/// Runs `tool` once and, on failure, its repair hook up to `policy.retries` times.
/// Never fails: errors are encoded in the returned [`NodeResult`].
pub async fn invoke_with_selfdebug(
    tool: &dyn Tool,
    args: &Args,
    ctx: &ToolContext,
    policy: SelfDebugPolicy,
) -> NodeResult {
    let started_us = ctx.elapsed_us();
    let name = tool.descriptor().name.clone();
    if let Err(message) = check_args(tool.descriptor(), args) {
        return NodeResult::not_run(ctx.task_id, &name, message, started_us);
    }

    let attempts = AtomicU32::new(0);
    let errors: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let work = async {
        loop {
            let n = attempts.fetch_add(1, Ordering::SeqCst);
            let outcome = if n == 0 {
                tool.run(args, ctx).await
            } else {
                let seen = errors.lock().expect("errors lock").clone();
                tool.repair(args, ctx, &seen).await
            };
            match outcome {
                Ok(out) => return Ok::<ToolOutput, ()>(out),
                Err(e) => {
                    tracing::debug!(task = %ctx.task_id, tool = %name, attempt = n + 1, error = %e, "tool attempt failed");
                    errors.lock().expect("errors lock").push(e.message);
                    if n >= policy.retries {
                        return Err(());
                    }
                }
            }
        }
    };
    let outcome = tokio::time::timeout(policy.timeout, work).await;
    let (usage, llm_calls) = ctx.usage();
    let mut result = NodeResult {
        task_id: ctx.task_id,
        tool: name,
        status: NodeStatus::Success,
        answer: Value::Null,
        reasoning: String::new(),
        details: Value::Null,
        error_message: None,
        attempts: attempts.load(Ordering::SeqCst),
        llm_calls,
        usage,
        started_us,
        ended_us: ctx.elapsed_us(),
    };
    match outcome {
        Ok(Ok(out)) => {
            result.answer = out.answer;
            result.reasoning = out.reasoning;
            result.details = out.details;
        }
        Ok(Err(())) => {
            result.status = NodeStatus::Error;
            result.error_message = errors.lock().expect("errors lock").last().cloned();
        }
        Err(_) => {
            result.status = NodeStatus::Error;
            result.error_message = Some("timeout".into());
        }
    }
    result
}
