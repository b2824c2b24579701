//! Human-readable rendering of a run trace.

use std::fmt::Write;

use lakeplan::control::{GenerationKind, RunTrace};
use lakeplan::llm::ParsedDecision;
use lakeplan::plan_dsl::render_task;
use lakeplan::tools::NodeStatus;
use serde_json::Value;

const ANSWER_PREVIEW: usize = 400;

fn preview(v: &Value) -> String {
    let text = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    if text.chars().count() <= ANSWER_PREVIEW {
        return text;
    }
    let cut: String = text.chars().take(ANSWER_PREVIEW).collect();
    format!("{cut}... ({} chars)", text.chars().count())
}

fn indent(text: &str, pad: &str) -> String {
    text.lines().map(|l| format!("{pad}{l}\n")).collect()
}

pub fn walkthrough(trace: &RunTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "question: {}", trace.question);
    let _ = writeln!(out, "lake: {}", trace.lake);

    for generation in &trace.generations {
        let kind = match generation.kind {
            GenerationKind::Plan => "plan",
            GenerationKind::Replan => "replan",
        };
        let _ = writeln!(out, "\n== generation {} ({kind}) ==", generation.index);
        if !generation.seeds.is_empty() {
            let ids = |v: &[lakeplan::plan_dsl::TaskId]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
            let _ = writeln!(out, "regenerating: {} (affected: {})", ids(&generation.seeds), ids(&generation.affected));
        }
        let Some(plan) = &generation.plan else {
            let _ = writeln!(out, "plan rejected: {}", generation.error.as_deref().unwrap_or("unknown error"));
            out.push_str(&indent(&generation.plan_text, "  | "));
            continue;
        };
        if let Some(schedule) = &generation.schedule {
            let batches: Vec<String> = schedule
                .batches
                .iter()
                .map(|b| format!("[{}]", b.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")))
                .collect();
            let _ = writeln!(out, "batches: {}", batches.join(" -> "));
        }
        let reused = generation.execution.as_ref().map(|e| e.reused.clone()).unwrap_or_default();
        for task in plan.tasks.iter().filter(|t| !t.is_join) {
            let _ = writeln!(out, "\n{}", render_task(task));
            if reused.contains(&task.id) {
                let _ = writeln!(out, "  reused from an earlier generation");
                continue;
            }
            let Some(r) = trace.memory.results.get(&task.id) else {
                let _ = writeln!(out, "  no result recorded");
                continue;
            };
            let status = match r.status {
                NodeStatus::Success => "success",
                NodeStatus::Error => "error",
            };
            let _ = writeln!(
                out,
                "  status: {status}, attempts: {}, tokens: {}",
                r.attempts,
                r.usage.total_tokens()
            );
            if !r.reasoning.is_empty() {
                out.push_str(&indent(&format!("reasoning: {}", r.reasoning.trim()), "  "));
            }
            if let Some(e) = &r.error_message {
                out.push_str(&indent(&format!("error: {e}"), "  "));
            }
            if !r.answer.is_null() {
                out.push_str(&indent(&format!("answer: {}", preview(&r.answer)), "  "));
            }
        }
        for d in trace.decisions.iter().filter(|d| d.generation == generation.index) {
            let line = match &d.parsed {
                ParsedDecision::Finish { .. } => "finish".to_string(),
                ParsedDecision::Replan { reason, .. } => format!("replan: {reason}"),
                ParsedDecision::Incomplete { missing, .. } => format!("incomplete answer, missing {}", missing.join(", ")),
                ParsedDecision::Malformed { error } => format!("unreadable decision: {error}"),
            };
            let _ = writeln!(out, "\ndecision: {line}");
        }
    }

    let _ = writeln!(out, "\n== final ==");
    let outcome = &trace.outcome;
    match &outcome.answer {
        Some(a) => {
            if outcome.degraded {
                let _ = writeln!(out, "(best effort after the replanning budget ran out)");
            }
            let _ = writeln!(out, "summary: {}", a.summary);
            let _ = writeln!(out, "inference: {}", a.inference.as_text());
            let _ = writeln!(out, "source: {}", a.source);
        }
        None => {
            let _ = writeln!(out, "aborted: {}", outcome.reason.as_deref().unwrap_or("unknown reason"));
        }
    }
    let m = &trace.metrics;
    let _ = writeln!(
        out,
        "steps: {}, tokens: {} ({} prompt, {} completion), cost: ${:.4}, latency: {:.2}s",
        m.steps,
        m.total_tokens(),
        m.prompt_tokens,
        m.completion_tokens,
        m.cost_usd,
        m.latency_s
    );
    out
}
