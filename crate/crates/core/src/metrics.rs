//! Run accounting (steps, tokens, latency, cost), question categories and the
//! aggregated report table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::RunTrace;
use crate::llm::UsageRecord;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Single,
    Multiple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputType {
    SingleValue,
    DataStructure,
    Plot,
    PlotPlot,
    PlotDataStructure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Workflow {
    #[default]
    Sequential,
    Parallel,
}

impl Modality {
    pub fn label(self) -> &'static str {
        match self {
            Modality::Single => "Single",
            Modality::Multiple => "Multiple",
        }
    }
}

impl OutputType {
    pub fn label(self) -> &'static str {
        match self {
            OutputType::SingleValue => "Single value",
            OutputType::DataStructure => "Data structure",
            OutputType::Plot => "Plot",
            OutputType::PlotPlot => "Plot + Plot",
            OutputType::PlotDataStructure => "Plot + Data structure",
        }
    }
}

impl Workflow {
    pub fn label(self) -> &'static str {
        match self {
            Workflow::Sequential => "Sequential",
            Workflow::Parallel => "Parallel",
        }
    }
}

/// Modality and output type come from the benchmark manifest; the workflow is
/// read off the executed schedules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Categories {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_type: Option<OutputType>,
    pub workflow: Workflow,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// LLM completions plus tool attempts.
    pub steps: u64,
    pub llm_calls: u64,
    pub tool_attempts: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_s: f64,
    pub cost_usd: f64,
    /// Some token counts were estimated rather than reported by the endpoint.
    pub approximate_tokens: bool,
    pub categories: Categories,
}

impl RunMetrics {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Totals over every completion and tool attempt in the trace.
pub fn summarize(trace: &RunTrace) -> Result<RunMetrics, MetricsError> {
    if trace.generations.is_empty() {
        return Err(MetricsError::IncompleteTrace("no plan generation recorded".into()));
    }
    let mut usage = UsageRecord::default();
    let mut llm_calls = 0u64;
    for call in &trace.llm_calls {
        usage.add(&call.call.usage);
        llm_calls += 1;
    }
    let mut tool_attempts = 0u64;
    for r in trace.memory.results.values() {
        usage.add(&r.usage);
        llm_calls += u64::from(r.llm_calls);
        tool_attempts += u64::from(r.attempts);
    }
    let parallel = trace.generations.iter().any(|g| match (&g.schedule, &g.graph) {
        (Some(s), Some(graph)) => s.max_width(graph.join_id) >= 2,
        _ => false,
    });
    Ok(RunMetrics {
        steps: llm_calls + tool_attempts,
        llm_calls,
        tool_attempts,
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
        latency_s: trace.wall_time_s,
        cost_usd: trace.rates.cost(usage.prompt_tokens, usage.completion_tokens),
        approximate_tokens: usage.approximate,
        categories: Categories {
            modality: None,
            output_type: None,
            workflow: if parallel { Workflow::Parallel } else { Workflow::Sequential },
        },
    })
}

/// One benchmark question after evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRun {
    pub metrics: RunMetrics,
    pub correct: bool,
    /// A plan passed validation in at least one generation.
    pub plan_generated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Modality,
    OutputType,
    Workflow,
    Overall,
}

impl Group {
    pub fn label(self) -> &'static str {
        match self {
            Group::Modality => "Modality",
            Group::OutputType => "Output Type",
            Group::Workflow => "Workflow",
            Group::Overall => "Overall",
        }
    }
}

/// Totals over a set of runs, as in one line of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: Group,
    pub label: String,
    pub questions: usize,
    pub accuracy: f64,
    pub steps: u64,
    pub tokens: u64,
    pub latency_s: f64,
    pub cost_usd: f64,
    pub plan_coverage: f64,
}

fn row(group: Group, label: &str, runs: &[&ScoredRun]) -> ReportRow {
    let n = runs.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    ReportRow {
        group,
        label: label.to_string(),
        questions: n,
        accuracy: frac(runs.iter().filter(|r| r.correct).count()),
        steps: runs.iter().map(|r| r.metrics.steps).sum(),
        tokens: runs.iter().map(|r| r.metrics.total_tokens()).sum(),
        latency_s: runs.iter().map(|r| r.metrics.latency_s).sum(),
        cost_usd: runs.iter().map(|r| r.metrics.cost_usd).sum(),
        plan_coverage: frac(runs.iter().filter(|r| r.plan_generated).count()),
    }
}

/// Rows per modality, output type and workflow value present in `runs`, then Overall.
pub fn aggregate(runs: &[ScoredRun]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let mut by_modality: BTreeMap<Modality, Vec<&ScoredRun>> = BTreeMap::new();
    let mut by_output: BTreeMap<OutputType, Vec<&ScoredRun>> = BTreeMap::new();
    let mut by_workflow: BTreeMap<Workflow, Vec<&ScoredRun>> = BTreeMap::new();
    for r in runs {
        let c = &r.metrics.categories;
        if let Some(m) = c.modality {
            by_modality.entry(m).or_default().push(r);
        }
        if let Some(o) = c.output_type {
            by_output.entry(o).or_default().push(r);
        }
        by_workflow.entry(c.workflow).or_default().push(r);
    }
    rows.extend(by_modality.iter().map(|(k, v)| row(Group::Modality, k.label(), v)));
    rows.extend(by_output.iter().map(|(k, v)| row(Group::OutputType, k.label(), v)));
    rows.extend(by_workflow.iter().map(|(k, v)| row(Group::Workflow, k.label(), v)));
    let all: Vec<&ScoredRun> = runs.iter().collect();
    rows.push(row(Group::Overall, "Overall", &all));
    rows
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "Accuracy",
    "Steps",
    "Tokens",
    "Latency [s]",
    "Cost [$]",
    "Gen. Plan",
    "Re-planning",
];

/// Thousands separators: 485612 -> "485,612".
pub fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn fixed2(v: f64) -> String {
    let s = format!("{:.2}", v);
    let (int, frac) = s.split_once('.').expect("two decimals");
    let int: u64 = int.parse().unwrap_or(0);
    format!("{}.{}", group_thousands(int), frac)
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Display cells for one row, in [`REPORT_COLUMNS`] order, preceded by the row label.
pub fn row_cells(r: &ReportRow, replanning: bool) -> Vec<String> {
    vec![
        format!("{} ({})", r.label, r.questions),
        pct(r.accuracy),
        group_thousands(r.steps),
        group_thousands(r.tokens),
        fixed2(r.latency_s),
        fixed2(r.cost_usd),
        pct(r.plan_coverage),
        yes_no(replanning).to_string(),
    ]
}

/// Aligned text table with a group column.
pub fn render_text(rows: &[ReportRow], replanning: bool) -> String {
    let mut header = vec!["Category".to_string(), "Group".to_string()];
    header.extend(REPORT_COLUMNS.iter().map(|c| c.to_string()));
    let mut table: Vec<Vec<String>> = vec![header];
    for r in rows {
        let mut cells = vec![r.group.label().to_string()];
        cells.extend(row_cells(r, replanning));
        table.push(cells);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|i| table.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, cells) in table.iter().enumerate() {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            let pad = widths[i] - cell.chars().count();
            if i < 2 {
                let _ = write!(line, "{cell}{}  ", " ".repeat(pad));
            } else {
                let _ = write!(line, "{}{cell}  ", " ".repeat(pad));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
        if n == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    out
}

/// Machine-readable form with raw numbers.
pub fn render_csv(rows: &[ReportRow], replanning: bool) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Category", "Group", "Questions"];
    header.extend(REPORT_COLUMNS);
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.group.label().to_string(),
            r.label.clone(),
            r.questions.to_string(),
            format!("{:.4}", r.accuracy),
            r.steps.to_string(),
            r.tokens.to_string(),
            format!("{:.3}", r.latency_s),
            format!("{:.6}", r.cost_usd),
            format!("{:.4}", r.plan_coverage),
            yes_no(replanning).to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
