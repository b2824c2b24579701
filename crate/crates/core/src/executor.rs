//! Batch execution of a task graph with bounded parallelism, `$id` argument
//! materialization, and the memory state shared with the control loop.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tokio::task::JoinSet;

use crate::lake::DataLake;
use crate::llm::Gateway;
use crate::plan_dsl::{ArgValue, TaskId, TaskSpec, TemplatePart};
use crate::task_graph::{BatchSchedule, TaskGraph};
use crate::tools::{
    invoke_with_selfdebug, value_text, Args, NodeResult, NodeStatus, SelfDebugPolicy, ToolContext, ToolRegistry,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecutorError {
    #[error("upstream {0} failed")]
    DependencyFailed(TaskId),
    #[error("upstream {0} has no result")]
    MissingResult(TaskId),
    #[error("task {0} already has a result")]
    AlreadyWritten(TaskId),
    #[error("invalid executor configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecutorConfig {
    /// Concurrent tool invocations (p).
    pub workers: usize,
    pub selfdebug: SelfDebugPolicy,
    /// Stop dispatching further batches after a failed task.
    pub fail_fast: bool,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            selfdebug: SelfDebugPolicy::default(),
            fail_fast: false,
        }
    }
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<(), ExecutorError> {
        if self.workers == 0 {
            return Err(ExecutorError::Config("workers must be at least 1".into()));
        }
        if self.selfdebug.timeout.is_zero() {
            return Err(ExecutorError::Config("task timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    PlanReady {
        tasks: usize,
        depth: usize,
        reused: Vec<TaskId>,
    },
    PlanRejected {
        error: String,
    },
    BatchStart {
        batch: usize,
        tasks: Vec<TaskId>,
    },
    NodeStart {
        task: TaskId,
        tool: String,
    },
    NodeEnd {
        task: TaskId,
        tool: String,
        status: NodeStatus,
        attempts: u32,
        llm_calls: u32,
        prompt_tokens: u64,
        completion_tokens: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    NodeSkipped {
        task: TaskId,
        tool: String,
        reason: String,
    },
    NodeReused {
        task: TaskId,
    },
    JoinReached {
        task: TaskId,
    },
    Decision {
        action: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Replan {
        seeds: Vec<TaskId>,
        affected: Vec<TaskId>,
    },
    Final {
        degraded: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub generation: u32,
    pub at_us: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// R: the query, the lake it runs against, every task result, and the event log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub query: String,
    pub schema_fingerprint: String,
    pub generation: u32,
    pub results: BTreeMap<TaskId, NodeResult>,
    pub events: Vec<Event>,
}

impl MemoryState {
    pub fn new(query: &str, schema_fingerprint: &str) -> Self {
        Self {
            query: query.to_string(),
            schema_fingerprint: schema_fingerprint.to_string(),
            generation: 1,
            ..Default::default()
        }
    }

    pub fn result(&self, id: TaskId) -> Option<&NodeResult> {
        self.results.get(&id)
    }

    /// Results are append-only: a task id is written once.
    pub fn record(&mut self, result: NodeResult) -> Result<(), ExecutorError> {
        if self.results.contains_key(&result.task_id) {
            return Err(ExecutorError::AlreadyWritten(result.task_id));
        }
        self.results.insert(result.task_id, result);
        Ok(())
    }

    pub fn push_event(&mut self, at_us: u64, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(Event {
            seq,
            generation: self.generation,
            at_us,
            kind,
        });
    }

    /// Copy with every timestamp and wall-clock figure zeroed.
    pub fn without_timing(&self) -> MemoryState {
        MemoryState {
            results: self.results.iter().map(|(k, v)| (*k, v.without_timing())).collect(),
            events: self.events.iter().map(|e| Event { at_us: 0, ..e.clone() }).collect(),
            ..self.clone()
        }
    }

    pub fn events_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.events_jsonl().as_bytes())?;
        f.flush()
    }
}

/// Concrete arguments for `task`. `Ref` keeps the upstream structure, `Mixed`
/// splices the compact text form of each upstream answer into the string.
pub fn materialize_args(task: &TaskSpec, memory: &MemoryState) -> Result<Args, ExecutorError> {
    for dep in &task.deps {
        match memory.result(*dep) {
            None => return Err(ExecutorError::MissingResult(*dep)),
            Some(r) if r.status == NodeStatus::Error => return Err(ExecutorError::DependencyFailed(*dep)),
            Some(_) => {}
        }
    }
    task.args
        .iter()
        .map(|(name, v)| Ok((name.clone(), materialize(v, memory)?)))
        .collect()
}

fn materialize(v: &ArgValue, memory: &MemoryState) -> Result<Value, ExecutorError> {
    let answer = |id: TaskId| {
        memory
            .result(id)
            .map(|r| &r.answer)
            .ok_or(ExecutorError::MissingResult(id))
    };
    Ok(match v {
        ArgValue::Constant(lit) => lit.to_json(),
        ArgValue::Ref(id) => answer(*id)?.clone(),
        ArgValue::Mixed(t) => {
            let mut s = String::new();
            for part in t.parts() {
                match part {
                    TemplatePart::Text(text) => s.push_str(text),
                    TemplatePart::Ref(id) => s.push_str(&value_text(answer(*id)?)),
                }
            }
            Value::String(s)
        }
        ArgValue::List(items) => Value::Array(
            items
                .iter()
                .map(|i| materialize(i, memory))
                .collect::<Result<_, _>>()?,
        ),
    })
}

/// Summary of one `execute_graph` call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub executed: Vec<TaskId>,
    pub reused: Vec<TaskId>,
    pub skipped: Vec<TaskId>,
    pub failed: Vec<TaskId>,
    pub batches_run: usize,
    pub stopped_early: bool,
}

pub struct Executor {
    registry: Arc<ToolRegistry>,
    lake: Option<Arc<DataLake>>,
    gateway: Option<Arc<Gateway>>,
    artifact_dir: PathBuf,
    config: ExecutorConfig,
    epoch: Instant,
}

impl Executor {
    pub fn new(registry: Arc<ToolRegistry>, config: ExecutorConfig, artifact_dir: PathBuf) -> Result<Self, ExecutorError> {
        config.validate()?;
        Ok(Self {
            registry,
            lake: None,
            gateway: None,
            artifact_dir,
            config,
            epoch: Instant::now(),
        })
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

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    pub fn elapsed_us(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    fn context(&self, task: TaskId) -> ToolContext {
        let mut ctx = ToolContext::new(task, self.artifact_dir.clone()).with_epoch(self.epoch);
        if let Some(l) = &self.lake {
            ctx = ctx.with_lake(Arc::clone(l));
        }
        if let Some(g) = &self.gateway {
            ctx = ctx.with_gateway(Arc::clone(g));
        }
        ctx
    }

    /// Runs the batches in order. Every non-join node ends with exactly one result;
    /// reusable nodes keep the one they already have. Within a batch at most
    /// `workers` tools run at once, dispatched in schedule order; the batch's
    /// events are appended in ascending task order once it completes.
    pub async fn execute_graph(
        &self,
        graph: &TaskGraph,
        schedule: &BatchSchedule,
        memory: &mut MemoryState,
    ) -> ExecutionReport {
        let mut report = ExecutionReport::default();
        for (index, batch) in schedule.batches.iter().enumerate() {
            if report.stopped_early {
                let now = self.elapsed_us();
                for id in batch.iter().filter(|id| **id != graph.join_id) {
                    if graph.reusable.contains(id) && memory.result(*id).is_some() {
                        continue;
                    }
                    let task = &graph.nodes[id];
                    let _ = memory.record(NodeResult::not_run(*id, &task.tool, "not run: an earlier task failed", now));
                    memory.push_event(now, EventKind::NodeSkipped { task: *id, tool: task.tool.clone(), reason: "fail-fast".into() });
                    report.skipped.push(*id);
                }
                continue;
            }
            memory.push_event(self.elapsed_us(), EventKind::BatchStart { batch: index, tasks: batch.clone() });
            let mut runnable = Vec::new();
            let mut finished: BTreeMap<TaskId, NodeResult> = BTreeMap::new();
            for id in batch {
                if *id == graph.join_id {
                    continue;
                }
                if graph.reusable.contains(id) && memory.result(*id).is_some() {
                    memory.push_event(self.elapsed_us(), EventKind::NodeReused { task: *id });
                    report.reused.push(*id);
                    continue;
                }
                let task = &graph.nodes[id];
                match materialize_args(task, memory) {
                    Ok(args) => runnable.push((task.clone(), args)),
                    Err(e) => {
                        finished.insert(*id, NodeResult::not_run(*id, &task.tool, e.to_string(), self.elapsed_us()));
                    }
                }
            }
            for (id, r) in self.run_batch(runnable).await {
                finished.insert(id, r);
            }
            let mut any_failed = false;
            for (id, result) in finished {
                let skipped = result.attempts == 0;
                if skipped {
                    memory.push_event(
                        result.started_us,
                        EventKind::NodeSkipped {
                            task: id,
                            tool: result.tool.clone(),
                            reason: result.error_message.clone().unwrap_or_default(),
                        },
                    );
                    report.skipped.push(id);
                } else {
                    memory.push_event(result.started_us, EventKind::NodeStart { task: id, tool: result.tool.clone() });
                    memory.push_event(
                        result.ended_us,
                        EventKind::NodeEnd {
                            task: id,
                            tool: result.tool.clone(),
                            status: result.status,
                            attempts: result.attempts,
                            llm_calls: result.llm_calls,
                            prompt_tokens: result.usage.prompt_tokens,
                            completion_tokens: result.usage.completion_tokens,
                            error: result.error_message.clone(),
                        },
                    );
                    report.executed.push(id);
                }
                if !result.is_success() {
                    any_failed = true;
                    report.failed.push(id);
                }
                if let Err(e) = memory.record(result) {
                    tracing::error!(error = %e, "duplicate result dropped");
                }
            }
            if batch.contains(&graph.join_id) {
                memory.push_event(self.elapsed_us(), EventKind::JoinReached { task: graph.join_id });
            }
            report.batches_run += 1;
            if any_failed && self.config.fail_fast {
                report.stopped_early = true;
            }
        }
        report
    }

    /// At most `workers` invocations in flight, started in the given order.
    async fn run_batch(&self, tasks: Vec<(TaskSpec, Args)>) -> Vec<(TaskId, NodeResult)> {
        let mut pending = tasks.into_iter();
        let mut running = JoinSet::new();
        let mut out = Vec::new();
        loop {
            while running.len() < self.config.workers {
                let Some((task, args)) = pending.next() else { break };
                let ctx = self.context(task.id);
                let policy = self.config.selfdebug;
                match self.registry.resolve(&task.tool) {
                    Some(tool) => {
                        running.spawn(async move {
                            let r = invoke_with_selfdebug(tool.as_ref(), &args, &ctx, policy).await;
                            (task.id, r)
                        });
                    }
                    None => {
                        let msg = format!("unknown tool '{}'", task.tool);
                        out.push((task.id, NodeResult::not_run(task.id, &task.tool, msg, ctx.elapsed_us())));
                    }
                }
            }
            match running.join_next().await {
                Some(Ok(pair)) => out.push(pair),
                Some(Err(e)) => tracing::error!(error = %e, "tool task panicked"),
                None => break,
            }
        }
        out
    }
}
