//! Benchmark harness (manifests, answer checking, reports) and the schedule
//! simulator used to reason about parallel speed-ups.
//!
//! Manifest (`manifest.json`):
//!
//! ```json
//! {"name": "mini-artwork", "lake": "../../lakes/artwork/lake.toml",
//!  "questions": [
//!    {"id": "q1", "text": "What is depicted on the oldest Renaissance painting?",
//!     "categories": {"modality": "multiple", "output_type": "single_value"},
//!     "gold": {"kind": "value", "expected": "umbrellas"}}
//!  ]}
//! ```
//!
//! Gold kinds: `value` (`expected`), `structure` (`rows`, order-insensitive; a
//! single map is one row), `plot` (`chart` kind optional, `categories`, `series`)
//! and `combo` (`parts`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::builtin::{ChartKind, ChartSpec, Series};
use crate::config::{ConfigError, EngineConfig};
use crate::control::RunTrace;
use crate::literal;
use crate::llm::Inference;
use crate::metrics::{self, Categories, Modality, OutputType, ReportRow, RunMetrics, ScoredRun};
use crate::plan_dsl::TaskId;
use crate::task_graph::{group_parallel_tasks, TaskGraph};
use crate::tools::NodeStatus;

const NUMERIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid latency model: {0}")]
    Latency(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionCategories {
    pub modality: Modality,
    pub output_type: OutputType,
    /// Free-form extra labels (e.g. answer type), carried into results.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotGold {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<ChartKind>,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoldSpec {
    Value { expected: Value },
    Structure { rows: Vec<Value> },
    Plot(PlotGold),
    Combo { parts: Vec<GoldSpec> },
}

impl GoldSpec {
    fn plots(&self) -> usize {
        match self {
            GoldSpec::Plot(_) => 1,
            GoldSpec::Combo { parts } => parts.iter().map(GoldSpec::plots).sum(),
            _ => 0,
        }
    }

    fn structures(&self) -> usize {
        match self {
            GoldSpec::Structure { .. } => 1,
            GoldSpec::Combo { parts } => parts.iter().map(GoldSpec::structures).sum(),
            _ => 0,
        }
    }

    fn fits(&self, output: OutputType) -> bool {
        match (output, self) {
            (OutputType::SingleValue, GoldSpec::Value { .. }) => true,
            (OutputType::DataStructure, GoldSpec::Structure { .. }) => true,
            (OutputType::Plot, GoldSpec::Plot(_)) => true,
            (OutputType::PlotPlot, GoldSpec::Combo { .. }) => self.plots() == 2 && self.structures() == 0,
            (OutputType::PlotDataStructure, GoldSpec::Combo { .. }) => self.plots() == 1 && self.structures() == 1,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchQuestion {
    pub id: String,
    pub text: String,
    pub categories: QuestionCategories,
    pub gold: GoldSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub name: String,
    /// Overrides the engine configuration's lake when present.
    #[serde(default)]
    pub lake: Option<PathBuf>,
    pub questions: Vec<BenchQuestion>,
}

impl BenchmarkManifest {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m: BenchmarkManifest =
            serde_json::from_str(&text).map_err(|e| BenchError::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.lake = m.lake.map(|l| base.join(l));
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let mut seen = BTreeSet::new();
        for q in &self.questions {
            if !seen.insert(q.id.as_str()) {
                return Err(BenchError::Manifest(format!("duplicate question id '{}'", q.id)));
            }
            if !q.gold.fits(q.categories.output_type) {
                return Err(BenchError::Manifest(format!(
                    "question '{}': gold does not match output type '{}'",
                    q.id,
                    q.categories.output_type.label()
                )));
            }
        }
        Ok(())
    }
}

// ---- evaluation ----

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnosis: Vec<String>,
}

/// A tool output taken from the final plan, with its artifact file if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Produced {
    pub tool: String,
    pub answer: Value,
    pub file: Option<PathBuf>,
}

/// What a run produced that gold can be compared with.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Candidates {
    pub inference: Option<Inference>,
    /// Successful outputs of the final plan's work nodes, ascending id.
    pub outputs: Vec<Produced>,
}

impl Candidates {
    pub fn from_trace(trace: &RunTrace) -> Self {
        let inference = trace.outcome.answer.as_ref().map(|a| a.inference.clone());
        let mut outputs = Vec::new();
        if let Some(g) = trace.final_graph() {
            for task in g.work_nodes() {
                let Some(r) = trace.memory.result(task.id) else { continue };
                if r.status != NodeStatus::Success {
                    continue;
                }
                outputs.push(Produced {
                    tool: r.tool.clone(),
                    answer: r.answer.clone(),
                    file: r.details.get("file").and_then(Value::as_str).map(PathBuf::from),
                });
            }
        }
        Self { inference, outputs }
    }
}

enum Scalar {
    Num(f64),
    Text(String),
}

fn scalar(v: &Value) -> Option<Scalar> {
    match v {
        Value::Number(n) => n.as_f64().map(Scalar::Num),
        Value::String(s) => {
            let t = s.trim();
            Some(match t.parse::<f64>() {
                Ok(f) if f.is_finite() => Scalar::Num(f),
                _ => Scalar::Text(t.to_lowercase()),
            })
        }
        Value::Bool(b) => Some(Scalar::Text(b.to_string())),
        Value::Null => Some(Scalar::Text("none".into())),
        _ => None,
    }
}

/// Trimmed, case-folded equality with a numeric tolerance; containers compare
/// element-wise.
pub fn values_match(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Array(a), Value::Array(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| values_match(x, y)),
        (Value::Object(a), Value::Object(b)) => {
            a.len() == b.len()
                && a.iter().all(|(k, x)| {
                    b.iter()
                        .find(|(k2, _)| k2.trim().eq_ignore_ascii_case(k.trim()))
                        .is_some_and(|(_, y)| values_match(x, y))
                })
        }
        _ => match (scalar(expected), scalar(actual)) {
            (Some(Scalar::Num(x)), Some(Scalar::Num(y))) => (x - y).abs() <= NUMERIC_TOLERANCE,
            (Some(Scalar::Text(x)), Some(Scalar::Text(y))) => x == y,
            _ => false,
        },
    }
}

/// Order-insensitive row comparison; a map counts as one row.
pub fn rows_match(expected: &[Value], actual: &Value) -> bool {
    let actual_rows: Vec<&Value> = match actual {
        Value::Array(rows) => rows.iter().collect(),
        Value::Object(_) => vec![actual],
        _ => return false,
    };
    if actual_rows.len() != expected.len() {
        return false;
    }
    let mut used = vec![false; actual_rows.len()];
    expected.iter().all(|e| {
        let hit = actual_rows
            .iter()
            .enumerate()
            .find(|(i, a)| !used[*i] && values_match(e, a))
            .map(|(i, _)| i);
        hit.map(|i| used[i] = true).is_some()
    })
}

/// Field-level differences between a gold chart and a produced one; empty when equal.
pub fn diff_chart(gold: &PlotGold, actual: &ChartSpec) -> Vec<String> {
    let mut diffs = Vec::new();
    if let Some(kind) = gold.chart {
        if kind != actual.kind {
            diffs.push(format!("kind: expected {kind:?}, got {:?}", actual.kind).to_lowercase());
        }
    }
    if gold.categories.len() != actual.categories.len() {
        diffs.push(format!(
            "categories: expected {} entries, got {}",
            gold.categories.len(),
            actual.categories.len()
        ));
    } else {
        for (i, (e, a)) in gold.categories.iter().zip(&actual.categories).enumerate() {
            if !values_match(&Value::from(e.as_str()), &Value::from(a.as_str())) {
                diffs.push(format!("categories[{i}]: expected '{e}', got '{a}'"));
            }
        }
    }
    if gold.series.len() != actual.series.len() {
        diffs.push(format!("series: expected {} series, got {}", gold.series.len(), actual.series.len()));
        return diffs;
    }
    for (s, (e, a)) in gold.series.iter().zip(&actual.series).enumerate() {
        if e.values.len() != a.values.len() {
            diffs.push(format!("series[{s}].values: expected {} values, got {}", e.values.len(), a.values.len()));
            continue;
        }
        for (i, (x, y)) in e.values.iter().zip(&a.values).enumerate() {
            if (x - y).abs() > NUMERIC_TOLERANCE {
                diffs.push(format!("series[{s}].values[{i}]: expected {x}, got {y}"));
            }
        }
    }
    diffs
}

fn inference_values(inference: &Inference) -> Vec<Value> {
    match inference {
        Inference::Text(t) => {
            let mut out = vec![Value::from(t.as_str())];
            if let Some(v) = literal::parse_value(t.trim()).filter(|v| v.is_array() || v.is_object()) {
                out.push(v);
            }
            out
        }
        Inference::List(items) => {
            let mut out = vec![Value::Array(items.clone())];
            if items.len() == 1 {
                out.push(items[0].clone());
            }
            out
        }
    }
}

fn decoded(v: &Value) -> Value {
    match v {
        Value::String(s) => literal::parse_value(s.trim()).unwrap_or_else(|| v.clone()),
        other => other.clone(),
    }
}

struct Checker<'a> {
    c: &'a Candidates,
    used_plots: BTreeSet<usize>,
}

impl Checker<'_> {
    fn check(&mut self, gold: &GoldSpec, diagnosis: &mut Vec<String>) -> bool {
        match gold {
            GoldSpec::Value { expected } => {
                let hit = self
                    .c
                    .inference
                    .iter()
                    .flat_map(inference_values)
                    .any(|v| values_match(expected, &v));
                if !hit {
                    let got = self.c.inference.as_ref().map_or("no answer".to_string(), |i| {
                        serde_json::to_string(i).unwrap_or_default()
                    });
                    diagnosis.push(format!("value: expected {expected}, got {got}"));
                }
                hit
            }
            GoldSpec::Structure { rows } => {
                let prepared = self
                    .c
                    .outputs
                    .iter()
                    .rev()
                    .filter(|p| p.tool == "data_preparation")
                    .map(|p| decoded(&p.answer));
                let inferred = self.c.inference.iter().flat_map(inference_values);
                let mut candidates = prepared.chain(inferred);
                let hit = candidates.any(|v| rows_match(rows, &v));
                if !hit {
                    diagnosis.push(format!("structure: no output matches the {} expected rows", rows.len()));
                }
                hit
            }
            GoldSpec::Plot(gold) => {
                let mut best: Option<Vec<String>> = None;
                for (i, p) in self.c.outputs.iter().enumerate() {
                    if p.tool != "data_plotting" || self.used_plots.contains(&i) {
                        continue;
                    }
                    let Ok(spec) = serde_json::from_value::<ChartSpec>(decoded(&p.answer)) else { continue };
                    let mut diffs = diff_chart(gold, &spec);
                    if !p.file.as_deref().is_some_and(Path::is_file) {
                        diffs.push(format!("file: {} was not written", spec.output_path));
                    }
                    if diffs.is_empty() {
                        self.used_plots.insert(i);
                        return true;
                    }
                    if best.as_ref().is_none_or(|b| diffs.len() < b.len()) {
                        best = Some(diffs);
                    }
                }
                match best {
                    Some(d) => diagnosis.extend(d.into_iter().map(|x| format!("plot: {x}"))),
                    None => diagnosis.push("plot: no chart was produced".into()),
                }
                false
            }
            GoldSpec::Combo { parts } => {
                let mut all = true;
                for p in parts {
                    all &= self.check(p, diagnosis);
                }
                all
            }
        }
    }
}

pub fn evaluate(candidates: &Candidates, gold: &GoldSpec) -> Evaluation {
    let mut diagnosis = Vec::new();
    let mut checker = Checker {
        c: candidates,
        used_plots: BTreeSet::new(),
    };
    let correct = checker.check(gold, &mut diagnosis);
    Evaluation { correct, diagnosis }
}

// ---- benchmark runs ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub id: String,
    pub categories: QuestionCategories,
    pub evaluation: Evaluation,
    pub plan_generated: bool,
    pub degraded: bool,
    pub metrics: RunMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub name: String,
    pub questions: Vec<QuestionResult>,
    pub rows: Vec<ReportRow>,
    /// Re-planning was enabled (max_replans > 0).
    pub replanning: bool,
}

impl BenchReport {
    pub fn accuracy(&self) -> f64 {
        self.overall().map_or(0.0, |r| r.accuracy)
    }

    /// Fraction of questions with at least one validated plan.
    pub fn plan_coverage(&self) -> f64 {
        self.overall().map_or(0.0, |r| r.plan_coverage)
    }

    pub fn overall(&self) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.group == metrics::Group::Overall)
    }

    pub fn render_text(&self) -> String {
        metrics::render_text(&self.rows, self.replanning)
    }

    pub fn render_csv(&self) -> String {
        metrics::render_csv(&self.rows, self.replanning)
    }

    /// One line per question: id, verdict, steps, tokens and any diagnosis.
    pub fn render_lines(&self) -> String {
        let mut out = String::new();
        for q in &self.questions {
            let verdict = if q.evaluation.correct { "correct" } else { "incorrect" };
            out.push_str(&format!(
                "{}\t{}\tsteps={}\ttokens={}",
                q.id,
                verdict,
                q.metrics.steps,
                q.metrics.total_tokens()
            ));
            if let Some(e) = &q.error {
                out.push_str(&format!("\terror={e}"));
            }
            for d in &q.evaluation.diagnosis {
                out.push_str(&format!("\t{d}"));
            }
            out.push('\n');
        }
        out
    }
}

async fn run_question(
    config: Arc<EngineConfig>,
    question: BenchQuestion,
    out_dir: Option<PathBuf>,
) -> Result<QuestionResult, BenchError> {
    let mut engine = config.build_engine()?;
    engine.artifact_dir = config.artifact_dir.join(&question.id);
    let categories = |mut m: RunMetrics| {
        m.categories = Categories {
            modality: Some(question.categories.modality),
            output_type: Some(question.categories.output_type),
            workflow: m.categories.workflow,
        };
        m
    };
    match engine.run_query(&question.text).await {
        Ok(trace) => {
            let trace_path = match &out_dir {
                Some(dir) => {
                    let path = dir.join(format!("{}.trace.json", question.id));
                    trace.write(&path).map_err(|source| BenchError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    Some(path)
                }
                None => None,
            };
            let evaluation = evaluate(&Candidates::from_trace(&trace), &question.gold);
            Ok(QuestionResult {
                id: question.id.clone(),
                categories: question.categories.clone(),
                evaluation,
                plan_generated: trace.plan_generated(),
                degraded: trace.outcome.degraded,
                metrics: categories(trace.metrics.clone()),
                trace_path,
                error: trace.outcome.reason.clone().filter(|_| trace.outcome.aborted),
            })
        }
        Err(e) => Ok(QuestionResult {
            id: question.id.clone(),
            categories: question.categories.clone(),
            evaluation: Evaluation {
                correct: false,
                diagnosis: vec![],
            },
            plan_generated: false,
            degraded: false,
            metrics: categories(RunMetrics::default()),
            trace_path: None,
            error: Some(e.to_string()),
        }),
    }
}

/// Runs every question on a fresh engine, up to `jobs` at a time. Traces go to
/// `out_dir/{id}.trace.json` when given; artifacts to `artifact_dir/{id}/`.
pub async fn run_benchmark(
    manifest: &BenchmarkManifest,
    config: &EngineConfig,
    out_dir: Option<&Path>,
    jobs: usize,
) -> Result<BenchReport, BenchError> {
    manifest.validate()?;
    let mut config = config.clone();
    if let Some(lake) = &manifest.lake {
        config.lake = lake.clone();
    }
    config.validate()?;
    let config = Arc::new(config);
    let permits = Arc::new(tokio::sync::Semaphore::new(jobs.max(1)));
    let mut set = tokio::task::JoinSet::new();
    for (idx, q) in manifest.questions.iter().cloned().enumerate() {
        let config = Arc::clone(&config);
        let permits = Arc::clone(&permits);
        let out_dir = out_dir.map(Path::to_path_buf);
        set.spawn(async move {
            let _permit = permits.acquire_owned().await.expect("semaphore open");
            (idx, run_question(config, q, out_dir).await)
        });
    }
    let mut results: Vec<Option<QuestionResult>> = vec![None; manifest.questions.len()];
    while let Some(joined) = set.join_next().await {
        let (idx, r) = joined.map_err(|e| BenchError::Manifest(format!("question task failed: {e}")))?;
        results[idx] = Some(r?);
    }
    let questions: Vec<QuestionResult> = results.into_iter().map(|r| r.expect("every question ran")).collect();
    let scored: Vec<ScoredRun> = questions
        .iter()
        .map(|q| ScoredRun {
            metrics: q.metrics.clone(),
            correct: q.evaluation.correct,
            plan_generated: q.plan_generated,
        })
        .collect();
    Ok(BenchReport {
        name: manifest.name.clone(),
        rows: metrics::aggregate(&scored),
        questions,
        replanning: config.control.max_replans > 0,
    })
}

// ---- schedule simulation ----

/// Seconds for one task: fixed, or uniform in `mean ± jitter` (clamped at 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Latency {
    Constant(f64),
    Jitter { mean: f64, jitter: f64 },
}

impl Latency {
    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Latency::Constant(s) => s,
            Latency::Jitter { mean, jitter } if jitter > 0.0 => rng.gen_range(mean - jitter..=mean + jitter).max(0.0),
            Latency::Jitter { mean, .. } => mean,
        }
    }

    fn valid(self) -> bool {
        match self {
            Latency::Constant(s) => s.is_finite() && s >= 0.0,
            Latency::Jitter { mean, jitter } => mean.is_finite() && jitter.is_finite() && mean >= 0.0 && jitter >= 0.0,
        }
    }
}

/// Simulator input. The join marker is simulated as a task named `join`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    #[serde(default = "unit_latency")]
    pub default: Latency,
    #[serde(default)]
    pub tools: BTreeMap<String, Latency>,
    /// Tokens spent per invocation of a tool.
    #[serde(default)]
    pub tokens: BTreeMap<String, u64>,
    #[serde(default)]
    pub seed: u64,
}

fn unit_latency() -> Latency {
    Latency::Constant(1.0)
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self {
            default: unit_latency(),
            tools: BTreeMap::new(),
            tokens: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl LatencyModel {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let model: LatencyModel = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| BenchError::Latency(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| BenchError::Latency(e.to_string()))?
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if !self.default.valid() {
            return Err(BenchError::Latency("default latency must be nonnegative".into()));
        }
        if let Some((name, _)) = self.tools.iter().find(|(_, l)| !l.valid()) {
            return Err(BenchError::Latency(format!("latency of '{name}' must be nonnegative")));
        }
        Ok(())
    }

    fn latency(&self, tool: &str) -> Latency {
        self.tools.get(tool).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub workers: Option<usize>,
    pub nodes: usize,
    pub depth: usize,
    pub sequential_makespan: f64,
    pub parallel_makespan: f64,
    pub tokens: u64,
}

impl SimulationResult {
    /// Fractional latency saved by the parallel schedule.
    pub fn reduction(&self) -> f64 {
        if self.sequential_makespan == 0.0 {
            0.0
        } else {
            1.0 - self.parallel_makespan / self.sequential_makespan
        }
    }
}

/// Per-node latencies, drawn once in ascending id order.
pub fn sample_latencies(graph: &TaskGraph, model: &LatencyModel) -> BTreeMap<TaskId, f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    graph
        .nodes
        .values()
        .map(|t| (t.id, model.latency(&t.tool).sample(&mut rng)))
        .collect()
}

/// Batch-by-batch list scheduling: each batch's tasks, in ascending id, go to the
/// earliest free of `workers` (None = unbounded); the next batch starts when the
/// previous one has finished, as in the executor.
pub fn level_makespan(batches: &[Vec<TaskId>], latencies: &BTreeMap<TaskId, f64>, workers: Option<usize>) -> f64 {
    let mut total = 0.0;
    for batch in batches {
        let p = workers.unwrap_or(batch.len()).clamp(1, batch.len().max(1));
        let mut free = vec![0.0f64; p];
        for id in batch {
            let slot = free
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .expect("at least one worker");
            free[slot] += latencies.get(id).copied().unwrap_or(0.0);
        }
        total += free.iter().copied().fold(0.0, f64::max);
    }
    total
}

pub fn simulate_schedule(graph: &TaskGraph, model: &LatencyModel, workers: Option<usize>) -> SimulationResult {
    let schedule = group_parallel_tasks(graph).expect("validated graphs are acyclic");
    let latencies = sample_latencies(graph, model);
    let sequential = schedule.order.iter().map(|id| latencies[id]).sum();
    let tokens = graph
        .work_nodes()
        .map(|t| model.tokens.get(&t.tool).copied().unwrap_or(0))
        .sum();
    SimulationResult {
        workers,
        nodes: graph.len(),
        depth: schedule.depth(),
        sequential_makespan: sequential,
        parallel_makespan: level_makespan(&schedule.batches, &latencies, workers),
        tokens,
    }
}
