//! The outer loop: plan, execute, decide, and replan only the affected part of
//! the graph until the decision stage finishes or the replan budget runs out.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{EventKind, ExecutionReport, Executor, ExecutorConfig, ExecutorError, MemoryState};
use crate::lake::DataLake;
use crate::llm::{
    FinalAnswer, Gateway, Inference, LlmCallRecord, LlmError, LlmResponse, ParsedDecision, RateCard, ReplanInput,
    TemplateId,
};
use crate::metrics::{summarize, RunMetrics};
use crate::plan_dsl::{compile_plan, parse_plan, render_task, render_tasks, validate_with_external, Plan, PlanError, TaskId};
use crate::task_graph::{affected_subgraph, build_dag, group_parallel_tasks, splice, BatchSchedule, TaskGraph};
use crate::tools::{value_text, NodeStatus, ToolRegistry};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("configuration error: {0}")]
    Config(String),
}

impl From<ExecutorError> for ControlError {
    fn from(e: ExecutorError) -> Self {
        ControlError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub max_replans: u32,
    /// Character budget of the decision-stage state before head/tail truncation.
    pub state_cap_chars: usize,
    /// Appended to the planner prompt.
    pub business_rules: String,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            max_replans: 2,
            state_cap_chars: 4000,
            business_rules: String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationKind {
    Plan,
    Replan,
}

/// One pass of plan (or replan) and execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub index: u32,
    pub kind: GenerationKind,
    pub plan_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Plan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<TaskGraph>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<BatchSchedule>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<TaskId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub affected: Vec<TaskId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub execution: Option<ExecutionReport>,
}

impl Generation {
    pub fn plan_valid(&self) -> bool {
        self.plan.is_some() && self.graph.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub generation: u32,
    pub parsed: ParsedDecision,
    /// This decision answered a re-prompt after an incomplete or unreadable one.
    #[serde(default)]
    pub repair: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Planner,
    Replanner,
    Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCall {
    pub generation: u32,
    pub stage: Stage,
    #[serde(flatten)]
    pub call: LlmCallRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<FinalAnswer>,
    /// Produced after the replan budget ran out rather than by a Finish decision.
    pub degraded: bool,
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl FinalOutcome {
    fn finished(answer: FinalAnswer) -> Self {
        Self {
            answer: Some(answer),
            degraded: false,
            aborted: false,
            reason: None,
        }
    }

    fn aborted(reason: impl Into<String>) -> Self {
        Self {
            answer: None,
            degraded: false,
            aborted: true,
            reason: Some(reason.into()),
        }
    }
}

/// Everything a run did, serializable as the trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub version: u32,
    pub question: String,
    pub lake: String,
    pub generations: Vec<Generation>,
    pub memory: MemoryState,
    pub decisions: Vec<DecisionRecord>,
    #[serde(rename = "final")]
    pub outcome: FinalOutcome,
    /// Planner, replanner and decision completions; tool completions live in the node results.
    pub llm_calls: Vec<StageCall>,
    pub rates: RateCard,
    pub wall_time_s: f64,
    pub metrics: RunMetrics,
}

impl RunTrace {
    pub fn without_timing(&self) -> RunTrace {
        let mut t = self.clone();
        t.memory = self.memory.without_timing();
        for c in &mut t.llm_calls {
            c.call.usage = c.call.usage.without_timing();
        }
        t.wall_time_s = 0.0;
        t.metrics.latency_s = 0.0;
        t
    }

    pub fn plan_generated(&self) -> bool {
        self.generations.iter().any(Generation::plan_valid)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    /// Writes `path` (JSON) and the event log next to it with a `.jsonl` extension.
    pub fn write(&self, path: &Path) -> std::io::Result<PathBuf> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json())?;
        let events = path.with_extension("jsonl");
        self.memory.write_jsonl(&events)?;
        Ok(events)
    }

    pub fn load(path: &Path) -> std::io::Result<RunTrace> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    /// The graph of the last generation that produced one.
    pub fn final_graph(&self) -> Option<&TaskGraph> {
        self.generations.iter().rev().find_map(|g| g.graph.as_ref())
    }
}

fn task_ref_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)(?:\b(?:task|step|action|node)\s*#?\s*|\$)(\d+)\b").expect("valid regex"))
}

/// Nodes to regenerate: failed ones, plus those the reason names; otherwise the
/// join's direct inputs. Never empty.
pub fn seeds_for_replan(memory: &MemoryState, graph: &TaskGraph, reason: &str) -> BTreeSet<TaskId> {
    let mut seeds: BTreeSet<TaskId> = graph
        .work_nodes()
        .filter(|t| memory.result(t.id).is_some_and(|r| r.status == NodeStatus::Error))
        .map(|t| t.id)
        .collect();
    for cap in task_ref_regex().captures_iter(reason) {
        if let Ok(n) = cap[1].parse::<u32>() {
            let id = TaskId(n);
            if id != graph.join_id && graph.nodes.contains_key(&id) {
                seeds.insert(id);
            }
        }
    }
    if seeds.is_empty() {
        seeds = graph.predecessors(graph.join_id);
    }
    if seeds.is_empty() {
        seeds.insert(graph.join_id);
    }
    seeds
}

/// Keeps the first and last parts of `text` when it exceeds `cap` characters.
pub fn truncate_middle(text: &str, cap: usize) -> String {
    let total = text.chars().count();
    if total <= cap {
        return text.to_string();
    }
    let head = cap / 2;
    let tail = cap - head;
    let start: String = text.chars().take(head).collect();
    let end: String = text.chars().skip(total - tail).collect();
    format!("{start}\n...[{} characters omitted]...\n{end}", total - cap)
}

/// The decision-stage scratchpad: question, plan, and one observation per task.
pub fn render_state(question: &str, memory: &MemoryState, graph: &TaskGraph, cap: usize) -> String {
    let tasks: Vec<_> = graph.nodes.values().cloned().collect();
    let mut obs = String::new();
    for task in graph.work_nodes() {
        let Some(r) = memory.result(task.id) else { continue };
        obs.push_str(&format!("{}. {}\n", task.id, render_task(task)));
        match r.status {
            NodeStatus::Success => {
                if !r.reasoning.is_empty() {
                    obs.push_str(&format!("   reasoning: {}\n", r.reasoning));
                }
                obs.push_str(&format!("   observation: {}\n", value_text(&r.answer)));
            }
            NodeStatus::Error => {
                obs.push_str(&format!(
                    "   error: {}\n",
                    r.error_message.as_deref().unwrap_or("unknown error")
                ));
            }
        }
    }
    let body = format!(
        "Question: {question}\n\nPlan:\n{}\n\nObservations:\n{}",
        render_tasks(&tasks),
        truncate_middle(obs.trim_end(), cap)
    );
    body
}

fn kept_results(memory: &MemoryState, graph: &TaskGraph, keep: &BTreeSet<TaskId>, cap: usize) -> String {
    let mut out = String::new();
    for id in keep {
        let (Some(task), Some(r)) = (graph.nodes.get(id), memory.result(*id)) else { continue };
        if task.is_join {
            continue;
        }
        out.push_str(&format!(
            "${id} = {}\n   result: {}\n",
            render_task(task),
            truncate_middle(&value_text(&r.answer), cap / keep.len().max(1))
        ));
    }
    if out.is_empty() {
        "(none)".to_string()
    } else {
        out.trim_end().to_string()
    }
}

const FINAL_NOTE: &str = "\n\nNote: this is the last attempt. Replanning is no longer possible, so finish with whatever information you have gathered.";

/// A configured engine: registry, gateway, lake, and loop settings.
pub struct Engine {
    pub registry: Arc<ToolRegistry>,
    pub gateway: Arc<Gateway>,
    pub lake: Arc<DataLake>,
    pub executor: ExecutorConfig,
    pub control: ControlConfig,
    pub artifact_dir: PathBuf,
}

struct Run {
    trace: RunTrace,
    epoch: Instant,
}

impl Run {
    fn note_call(&mut self, generation: u32, stage: Stage, template: TemplateId, r: &LlmResponse) {
        self.trace.llm_calls.push(StageCall {
            generation,
            stage,
            call: LlmCallRecord::from_response(template, r),
        });
    }

    fn now(&self) -> u64 {
        self.epoch.elapsed().as_micros() as u64
    }

    fn abort(&mut self, reason: String) {
        tracing::warn!(%reason, "run aborted");
        self.trace.outcome = FinalOutcome::aborted(reason);
    }
}

impl Engine {
    pub fn planner_state(&self, question: &str) -> String {
        format!(
            "Question: {question}\n\nDatabase schema:\n{}",
            self.lake.schema_catalog().render_compact()
        )
    }

    /// Runs one question to completion. Only configuration problems are errors;
    /// every other failure is recorded in the returned trace.
    pub async fn run_query(&self, question: &str) -> Result<RunTrace, ControlError> {
        let epoch = Instant::now();
        let executor = Executor::new(Arc::clone(&self.registry), self.executor, self.artifact_dir.clone())?
            .with_lake(Arc::clone(&self.lake))
            .with_gateway(Arc::clone(&self.gateway))
            .with_epoch(epoch);
        let mut run = Run {
            epoch,
            trace: RunTrace {
                version: TRACE_VERSION,
                question: question.to_string(),
                lake: self.lake.name().to_string(),
                generations: Vec::new(),
                memory: MemoryState::new(question, &self.lake.schema_catalog().fingerprint()),
                decisions: Vec::new(),
                outcome: FinalOutcome::aborted("run did not complete"),
                llm_calls: Vec::new(),
                rates: self.gateway.rates(),
                wall_time_s: 0.0,
                metrics: RunMetrics::default(),
            },
        };
        self.drive(&mut run, &executor).await;
        run.trace.wall_time_s = epoch.elapsed().as_secs_f64();
        let degraded = run.trace.outcome.degraded;
        let at = run.now();
        run.trace.memory.push_event(at, EventKind::Final { degraded });
        if let Ok(m) = summarize(&run.trace) {
            run.trace.metrics = m;
        }
        Ok(run.trace)
    }

    async fn drive(&self, run: &mut Run, executor: &Executor) {
        let question = run.trace.question.clone();
        let tools = self.registry.descriptors().to_vec();
        let max_generations = self.control.max_replans + 1;
        let mut graph: Option<TaskGraph> = None;
        // (reason, seeds, affected) carried into the next replanning pass
        let mut pending: Option<(String, BTreeSet<TaskId>, BTreeSet<TaskId>)> = None;
        let mut plan_feedback = String::new();

        for index in 1..=max_generations {
            run.trace.memory.generation = index;
            let last = index == max_generations;

            // 1. plan or replan
            let (kind, text, compiled) = match (&graph, &pending) {
                (Some(g), Some((reason, _seeds, affected))) => {
                    let keep: BTreeSet<TaskId> = g.nodes.keys().filter(|k| !affected.contains(k)).copied().collect();
                    let next_id = g.work_nodes().map(|t| t.id.0).max().unwrap_or(0) + 1;
                    let previous: Vec<_> = g.nodes.values().cloned().collect();
                    let kept = kept_results(&run.trace.memory, g, &keep, self.control.state_cap_chars);
                    let reason_text = format!("{reason}{plan_feedback}");
                    let input = ReplanInput {
                        question: &question,
                        previous_plan: &render_tasks(&previous),
                        kept_results: &kept,
                        reason: &reason_text,
                        next_id,
                    };
                    let response = match self.gateway.replan(&input, &tools).await {
                        Ok(r) => r,
                        Err(e) => return run.abort(format!("replanner call failed: {e}")),
                    };
                    run.note_call(index, Stage::Replanner, TemplateId::Replanner, &response);
                    let preserved: BTreeSet<TaskId> = keep.iter().filter(|k| **k != g.join_id).copied().collect();
                    let compiled = compile_replan(&response.text, &tools, &preserved, g, &keep);
                    (GenerationKind::Replan, response.text, compiled)
                }
                _ => {
                    let state = format!("{}{plan_feedback}", self.planner_state(&question));
                    let response = match self.gateway.plan(&state, &tools, &self.control.business_rules).await {
                        Ok(r) => r,
                        Err(e) => return run.abort(format!("planner call failed: {e}")),
                    };
                    run.note_call(index, Stage::Planner, TemplateId::Planner, &response);
                    let compiled = compile_plan(&response.text, &tools)
                        .map_err(|e| e.feedback())
                        .and_then(|p| build_dag(&p).map(|g| (p, g)).map_err(|e| e.to_string()));
                    (GenerationKind::Plan, response.text, compiled)
                }
            };
            let (seeds, affected) = pending
                .as_ref()
                .map(|(_, s, a)| (s.iter().copied().collect(), a.iter().copied().collect()))
                .unwrap_or_default();
            let mut generation = Generation {
                index,
                kind,
                plan_text: text,
                plan: None,
                graph: None,
                schedule: None,
                seeds,
                affected,
                error: None,
                execution: None,
            };

            let (plan, new_graph) = match compiled {
                Ok(pair) => pair,
                Err(feedback) => {
                    let at = run.now();
                    run.trace.memory.push_event(at, EventKind::PlanRejected { error: feedback.clone() });
                    plan_feedback = format!("\n\nThe previous plan was rejected:\n{feedback}\nWrite a corrected plan.");
                    generation.error = Some(feedback);
                    run.trace.generations.push(generation);
                    continue;
                }
            };
            plan_feedback.clear();
            let schedule = match group_parallel_tasks(&new_graph) {
                Ok(s) => s,
                Err(e) => {
                    generation.error = Some(e.to_string());
                    run.trace.generations.push(generation);
                    continue;
                }
            };
            let at = run.now();
            run.trace.memory.push_event(
                at,
                EventKind::PlanReady {
                    tasks: new_graph.len(),
                    depth: schedule.depth(),
                    reused: new_graph.reusable.iter().copied().collect(),
                },
            );

            // 2. execute
            let report = executor.execute_graph(&new_graph, &schedule, &mut run.trace.memory).await;
            generation.plan = Some(plan);
            generation.graph = Some(new_graph.clone());
            generation.schedule = Some(schedule);
            generation.execution = Some(report);
            run.trace.generations.push(generation);
            graph = Some(new_graph.clone());

            // 3. decide
            let mut state = render_state(&question, &run.trace.memory, &new_graph, self.control.state_cap_chars);
            if last {
                state.push_str(FINAL_NOTE);
            }
            let parsed = match self.decide(run, index, &state).await {
                Ok(p) => p,
                Err(e) => return run.abort(format!("decision call failed: {e}")),
            };
            match parsed {
                ParsedDecision::Finish { answer, .. } => {
                    let at = run.now();
                    run.trace.memory.push_event(at, EventKind::Decision { action: "finish".into(), reason: None });
                    run.trace.outcome = FinalOutcome::finished(answer);
                    return;
                }
                ParsedDecision::Incomplete { missing, .. } => {
                    return run.abort(format!("final answer is missing {}", missing.join(", ")));
                }
                ParsedDecision::Replan { reason, .. } | ParsedDecision::Malformed { error: reason } => {
                    let at = run.now();
                    run.trace
                        .memory
                        .push_event(at, EventKind::Decision { action: "replan".into(), reason: Some(reason.clone()) });
                    if last {
                        break;
                    }
                    let seeds = seeds_for_replan(&run.trace.memory, &new_graph, &reason);
                    let affected = affected_subgraph(&new_graph, &seeds).unwrap_or_else(|_| new_graph.nodes.keys().copied().collect());
                    run.trace.memory.push_event(
                        at,
                        EventKind::Replan {
                            seeds: seeds.iter().copied().collect(),
                            affected: affected.iter().copied().collect(),
                        },
                    );
                    pending = Some((reason, seeds, affected));
                }
            }
        }

        let answer = best_effort(&question, &run.trace.memory, graph.as_ref(), &run.trace);
        run.trace.outcome = FinalOutcome {
            answer: Some(answer),
            degraded: true,
            aborted: false,
            reason: Some(format!("no satisfactory answer after {max_generations} plan generations")),
        };
    }

    /// One decision call, re-prompted once when the answer is incomplete or unreadable.
    async fn decide(&self, run: &mut Run, generation: u32, state: &str) -> Result<ParsedDecision, LlmError> {
        let (parsed, response) = self.gateway.decide(state).await?;
        run.note_call(generation, Stage::Decision, TemplateId::Decision, &response);
        run.trace.decisions.push(DecisionRecord { generation, parsed: parsed.clone(), repair: false });
        let hint = match &parsed {
            ParsedDecision::Incomplete { missing, .. } => format!(
                "\n\nYour previous Finish answer was missing the keys: {}. Answer again with all five keys.",
                missing.join(", ")
            ),
            ParsedDecision::Malformed { error } => format!(
                "\n\nYour previous response could not be read ({error}). Respond with a Thought line and an Action line: Finish(...) or Replan(...)."
            ),
            _ => return Ok(parsed),
        };
        let (again, response) = self.gateway.decide(&format!("{state}{hint}")).await?;
        run.note_call(generation, Stage::Decision, TemplateId::Decision, &response);
        run.trace.decisions.push(DecisionRecord { generation, parsed: again.clone(), repair: true });
        Ok(again)
    }
}

type Compiled = Result<(Plan, TaskGraph), String>;

fn compile_replan(
    text: &str,
    tools: &[crate::tools::ToolDescriptor],
    preserved: &BTreeSet<TaskId>,
    graph: &TaskGraph,
    keep: &BTreeSet<TaskId>,
) -> Compiled {
    let draft = parse_plan(text).map_err(|error| PlanError::Syntax { error }.feedback())?;
    let plan = validate_with_external(&draft, &tools.to_vec(), preserved)
        .map_err(|errors| PlanError::Invalid { errors }.feedback())?;
    let spliced = splice(graph, keep, &plan).map_err(|e| e.to_string())?;
    Ok((plan, spliced))
}

/// Final answer assembled from whatever succeeded when the budget is exhausted.
fn best_effort(question: &str, memory: &MemoryState, graph: Option<&TaskGraph>, trace: &RunTrace) -> FinalAnswer {
    let mut found = Vec::new();
    let mut failures = Vec::new();
    if let Some(g) = graph {
        for task in g.work_nodes() {
            if let Some(r) = memory.result(task.id) {
                match r.status {
                    NodeStatus::Success => found.push(format!("{} ({}): {}", task.id, task.tool, value_text(&r.answer))),
                    NodeStatus::Error => failures.push(format!(
                        "{} ({}): {}",
                        task.id,
                        task.tool,
                        r.error_message.as_deref().unwrap_or("error")
                    )),
                }
            }
        }
    }
    let last_reason = trace
        .decisions
        .iter()
        .rev()
        .find_map(|d| match &d.parsed {
            ParsedDecision::Replan { reason, .. } => Some(reason.clone()),
            _ => None,
        })
        .unwrap_or_default();
    FinalAnswer {
        summary: format!(
            "The question could not be answered completely after {} attempts.",
            trace.generations.len()
        ),
        details: if found.is_empty() {
            "No step produced a usable result.".into()
        } else {
            found.join("\n")
        },
        source: format!("Partial results gathered for: {question}"),
        inference: Inference::Text("None".into()),
        extra_explanation: [failures.join("\n"), last_reason]
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan_dsl::{compile_plan, TaskSpec};
    use crate::tools::NodeResult;
    use serde_json::json;

    fn graph(text: &str) -> TaskGraph {
        let tools: Vec<crate::tools::ToolDescriptor> = ["text2SQL", "image_analysis"]
            .iter()
            .map(|n| {
                crate::tools::ToolDescriptor::new(
                    n,
                    "",
                    vec![
                        crate::tools::ArgSpec::optional("problem", crate::tools::ValueType::Text),
                        crate::tools::ArgSpec::optional("question", crate::tools::ValueType::Text),
                        crate::tools::ArgSpec::optional("context", crate::tools::ValueType::Structured),
                    ],
                    crate::tools::ValueType::Any,
                )
            })
            .collect();
        build_dag(&compile_plan(text, &tools).unwrap()).unwrap()
    }

    fn memory(statuses: &[(u32, NodeStatus)]) -> MemoryState {
        let mut m = MemoryState::new("q", "");
        for (id, s) in statuses {
            let mut r = NodeResult::not_run(TaskId(*id), "t", "boom", 0);
            r.status = *s;
            r.answer = json!("x");
            m.record(r).unwrap();
        }
        m
    }

    const EX2: &str = "1. text2SQL(problem=\"oldest\")\n2. image_analysis(question=\"What is depicted?\", context=$1)\n3. join()";

    #[test]
    fn seeds_from_errors() {
        let g = graph(EX2);
        let m = memory(&[(1, NodeStatus::Success), (2, NodeStatus::Error)]);
        assert_eq!(seeds_for_replan(&m, &g, "something broke"), BTreeSet::from([TaskId(2)]));
    }

    #[test]
    fn seeds_fall_back_to_join_inputs() {
        let g = graph(EX2);
        let m = memory(&[(1, NodeStatus::Success), (2, NodeStatus::Success)]);
        let seeds = seeds_for_replan(&m, &g, "The image answer is too vague; ask for more detail.");
        assert_eq!(seeds, BTreeSet::from([TaskId(2)]));
    }

    #[test]
    fn seeds_named_in_reason() {
        let g = graph("1. text2SQL(problem=\"a\")\n2. text2SQL(problem=\"b\")\n3. image_analysis(question=\"c\", context=$2)\n4. join()");
        let m = memory(&[(1, NodeStatus::Success), (2, NodeStatus::Success), (3, NodeStatus::Success)]);
        let oracle: BTreeSet<TaskId> = Regex::new(r"task (\d+)")
            .unwrap()
            .captures_iter("Redo task 3, and task 9 does not exist")
            .map(|c| TaskId(c[1].parse().unwrap()))
            .filter(|id| g.nodes.contains_key(id))
            .collect();
        assert_eq!(seeds_for_replan(&m, &g, "Redo task 3, and task 9 does not exist"), oracle);
        assert_eq!(seeds_for_replan(&m, &g, "result of $1 is wrong"), BTreeSet::from([TaskId(1)]));
    }

    #[test]
    fn truncation_keeps_head_and_tail() {
        let text: String = "a".repeat(50) + &"b".repeat(50);
        let t = truncate_middle(&text, 20);
        assert!(t.starts_with(&"a".repeat(10)) && t.ends_with(&"b".repeat(10)));
        assert!(t.contains("[80 characters omitted]"));
        assert_eq!(truncate_middle("short", 20), "short");
    }

    #[test]
    fn state_lists_observations_and_errors() {
        let g = graph(EX2);
        let m = memory(&[(1, NodeStatus::Success), (2, NodeStatus::Error)]);
        let s = render_state("Which?", &m, &g, 4000);
        assert!(s.starts_with("Question: Which?\n\nPlan:\n1. text2SQL("));
        assert!(s.contains("   observation: x"));
        assert!(s.contains("   error: boom"));
    }

    #[test]
    fn best_effort_reports_partial_results() {
        let g = graph(EX2);
        let m = memory(&[(1, NodeStatus::Success), (2, NodeStatus::Error)]);
        let trace = RunTrace {
            version: TRACE_VERSION,
            question: "q".into(),
            lake: "l".into(),
            generations: vec![],
            memory: m.clone(),
            decisions: vec![],
            outcome: FinalOutcome::aborted("x"),
            llm_calls: vec![],
            rates: RateCard::default(),
            wall_time_s: 0.0,
            metrics: RunMetrics::default(),
        };
        let a = best_effort("q", &m, Some(&g), &trace);
        assert!(a.details.contains("1 (text2SQL): x"));
        assert!(a.extra_explanation.contains("2 (image_analysis): boom"));
        let _ = TaskSpec::join(3, &[]);
    }
}
