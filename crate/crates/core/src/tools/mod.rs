//! Tool catalogue, dispatch, and the bounded self-debugging wrapper around every
//! tool invocation.

mod descriptor;
mod invoke;
mod registry;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use async_trait::async_trait;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::lake::{DataLake, LakeError};
use crate::llm::{Gateway, LlmError, LlmResponse, TemplateId, UsageRecord, Vars};
use crate::plan_dsl::TaskId;

pub use descriptor::{ArgSpec, ToolCatalog, ToolDescriptor, ToolMenu, ValueType};
pub use invoke::{check_args, invoke_with_selfdebug, NodeResult, NodeStatus, SelfDebugPolicy};
pub use registry::{RegistryError, ToolRegistry};

/// Concrete arguments after `$id` references were replaced by upstream answers.
pub type Args = IndexMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolOutput {
    pub answer: Value,
    pub reasoning: String,
    /// Tool-specific extras for inspection: generated SQL, saved files, per-item errors.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl ToolOutput {
    pub fn new(answer: Value, reasoning: impl Into<String>) -> Self {
        Self {
            answer,
            reasoning: reasoning.into(),
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

/// A failed attempt. The message is what the repair hook and the decision stage see.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct ToolError {
    pub message: String,
}

impl ToolError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl From<LakeError> for ToolError {
    fn from(e: LakeError) -> Self {
        ToolError::new(e.to_string())
    }
}

impl From<LlmError> for ToolError {
    fn from(e: LlmError) -> Self {
        ToolError::new(e.to_string())
    }
}

/// Per-invocation environment handed to a tool.
#[derive(Debug)]
pub struct ToolContext {
    pub task_id: TaskId,
    pub lake: Option<Arc<DataLake>>,
    pub gateway: Option<Arc<Gateway>>,
    pub artifact_dir: PathBuf,
    pub epoch: Instant,
    tally: Mutex<Tally>,
}

#[derive(Debug, Default)]
struct Tally {
    usage: UsageRecord,
    llm_calls: u32,
}

impl ToolContext {
    pub fn new(task_id: TaskId, artifact_dir: PathBuf) -> Self {
        Self {
            task_id,
            lake: None,
            gateway: None,
            artifact_dir,
            epoch: Instant::now(),
            tally: Mutex::new(Tally::default()),
        }
    }

    pub fn with_lake(mut self, lake: Arc<DataLake>) -> Self {
        self.lake = Some(lake);
        self
    }

    pub fn with_gateway(mut self, gateway: Arc<Gateway>) -> Self {
        self.gateway = Some(gateway);
        self
    }

    pub fn with_epoch(mut self, epoch: Instant) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn lake(&self) -> Result<&DataLake, ToolError> {
        self.lake
            .as_deref()
            .ok_or_else(|| ToolError::new("no data lake is configured"))
    }

    /// One completion through the gateway, counted against this invocation.
    pub async fn complete(&self, template: TemplateId, vars: &Vars) -> Result<LlmResponse, ToolError> {
        let gateway = self
            .gateway
            .as_deref()
            .ok_or_else(|| ToolError::new("no language model is configured"))?;
        let response = gateway.complete(template, vars).await?;
        let mut tally = self.tally.lock().expect("tally lock");
        tally.usage.add(&response.usage);
        tally.llm_calls += 1;
        Ok(response)
    }

    /// Adds usage reported by something other than the gateway.
    pub fn record_usage(&self, usage: &UsageRecord, llm_calls: u32) {
        let mut tally = self.tally.lock().expect("tally lock");
        tally.usage.add(usage);
        tally.llm_calls += llm_calls;
    }

    pub fn usage(&self) -> (UsageRecord, u32) {
        let tally = self.tally.lock().expect("tally lock");
        (tally.usage.clone(), tally.llm_calls)
    }

    pub fn elapsed_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }
}

#[async_trait]
pub trait Tool: Send + Sync {
    fn descriptor(&self) -> &ToolDescriptor;

    async fn run(&self, args: &Args, ctx: &ToolContext) -> Result<ToolOutput, ToolError>;

    /// Retry after a failure; `errors` holds every failure message so far, oldest first.
    async fn repair(&self, args: &Args, ctx: &ToolContext, errors: &[String]) -> Result<ToolOutput, ToolError> {
        let _ = errors;
        self.run(args, ctx).await
    }
}

/// Single-line text form of a structured value: strings stay bare, everything
/// else is compact JSON.
pub fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Text argument, or `None` when absent.
pub fn text_arg(args: &Args, name: &str) -> Option<String> {
    args.get(name).map(value_text)
}

pub fn required_text(args: &Args, name: &str) -> Result<String, ToolError> {
    text_arg(args, name)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| ToolError::new(format!("argument '{name}' is empty")))
}
