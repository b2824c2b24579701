use std::fmt::Write as _;

use super::ast::{ArgValue, Literal, Plan, TaskSpec, TemplatePart};
use super::parser::END_MARKER;

/// Canonical plan text: one task per line, then `<END_OF_PLAN>`.
pub fn render_plan(plan: &Plan) -> String {
    render_tasks(&plan.tasks)
}

pub fn render_tasks(tasks: &[TaskSpec]) -> String {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&render_task(task));
        out.push('\n');
    }
    out.push_str(END_MARKER);
    out
}

pub fn render_task(task: &TaskSpec) -> String {
    let mut out = format!("{}. {}(", task.id, task.tool);
    if task.is_join {
        let inputs: Vec<String> = task.deps.iter().map(|d| format!("${d}")).collect();
        out.push_str(&inputs.join(", "));
    } else {
        let args: Vec<String> = task
            .args
            .iter()
            .map(|(k, v)| format!("{k}={}", render_value(v)))
            .collect();
        out.push_str(&args.join(", "));
    }
    out.push(')');
    out
}

pub fn render_value(value: &ArgValue) -> String {
    match value {
        ArgValue::Constant(lit) => render_literal(lit),
        ArgValue::Ref(id) => format!("${id}"),
        ArgValue::Mixed(template) => {
            let mut out = String::from("\"");
            for part in template.parts() {
                match part {
                    TemplatePart::Text(t) => escape_into(&mut out, t),
                    TemplatePart::Ref(id) => {
                        let _ = write!(out, "${id}");
                    }
                }
            }
            out.push('"');
            out
        }
        ArgValue::List(items) => {
            let inner: Vec<String> = items.iter().map(render_value).collect();
            format!("[{}]", inner.join(", "))
        }
    }
}

pub fn render_literal(lit: &Literal) -> String {
    match lit {
        Literal::Int(i) => i.to_string(),
        // `{:?}` keeps a decimal point so the value re-parses as a float
        Literal::Float(f) => format!("{f:?}"),
        Literal::Str(s) => {
            let mut out = String::from("\"");
            escape_into(&mut out, s);
            out.push('"');
            out
        }
        Literal::List(items) => {
            let inner: Vec<String> = items.iter().map(render_literal).collect();
            format!("[{}]", inner.join(", "))
        }
    }
}

fn escape_into(out: &mut String, text: &str) {
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            '$' if matches!(chars.peek(), Some(n) if n.is_ascii_digit()) => out.push_str("\\$"),
            c => out.push(c),
        }
    }
}
