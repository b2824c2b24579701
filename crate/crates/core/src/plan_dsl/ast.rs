use std::collections::BTreeSet;
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

/// Identifier of a plan step. Positive, unique and strictly increasing within one plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl TaskId {
    pub const fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TaskId {
    fn from(v: u32) -> Self {
        TaskId(v)
    }
}

/// A constant value written directly in the plan text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Literal>),
}

impl Literal {
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Literal::Int(i) => serde_json::Value::from(*i),
            Literal::Float(f) => serde_json::Number::from_f64(*f)
                .map(serde_json::Value::Number)
                .unwrap_or(serde_json::Value::Null),
            Literal::Str(s) => serde_json::Value::String(s.clone()),
            Literal::List(items) => {
                serde_json::Value::Array(items.iter().map(Literal::to_json).collect())
            }
        }
    }
}

/// One piece of a quoted string that embeds `$id` references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplatePart {
    Text(String),
    Ref(TaskId),
}

/// Quoted text with at least one `$id` token. Adjacent text parts are always merged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Template(pub Vec<TemplatePart>);

impl Template {
    pub fn parts(&self) -> &[TemplatePart] {
        &self.0
    }

    pub fn refs(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.0.iter().filter_map(|p| match p {
            TemplatePart::Ref(id) => Some(*id),
            TemplatePart::Text(_) => None,
        })
    }
}

/// An argument value in a plan step.
///
/// Bracketed lists that mix constants with `$id` items are kept as [`ArgValue::List`];
/// lists of pure constants are always folded into [`ArgValue::Constant`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgValue {
    Constant(Literal),
    Ref(TaskId),
    Mixed(Template),
    List(Vec<ArgValue>),
}

impl ArgValue {
    pub fn text(s: &str) -> Self {
        ArgValue::Constant(Literal::Str(s.to_string()))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, ArgValue::Constant(_))
    }

    /// Rewrites every embedded reference through `f`.
    pub fn map_refs(&self, f: &impl Fn(TaskId) -> TaskId) -> ArgValue {
        match self {
            ArgValue::Constant(c) => ArgValue::Constant(c.clone()),
            ArgValue::Ref(id) => ArgValue::Ref(f(*id)),
            ArgValue::Mixed(t) => ArgValue::Mixed(Template(
                t.0.iter()
                    .map(|p| match p {
                        TemplatePart::Ref(id) => TemplatePart::Ref(f(*id)),
                        other => other.clone(),
                    })
                    .collect(),
            )),
            ArgValue::List(items) => ArgValue::List(items.iter().map(|v| v.map_refs(f)).collect()),
        }
    }
}

/// All task ids referenced by an argument value.
pub fn extract_refs(arg: &ArgValue) -> BTreeSet<TaskId> {
    let mut out = BTreeSet::new();
    collect_refs(arg, &mut out);
    out
}

fn collect_refs(arg: &ArgValue, out: &mut BTreeSet<TaskId>) {
    match arg {
        ArgValue::Constant(_) => {}
        ArgValue::Ref(id) => {
            out.insert(*id);
        }
        ArgValue::Mixed(t) => out.extend(t.refs()),
        ArgValue::List(items) => items.iter().for_each(|v| collect_refs(v, out)),
    }
}

pub const JOIN_TOOL: &str = "join";

/// One parsed plan line: `id. tool(name=value, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub tool: String,
    pub args: IndexMap<String, ArgValue>,
    /// Union of all references in `args`; for `join`, its positional `$id` inputs.
    pub deps: BTreeSet<TaskId>,
    pub is_join: bool,
}

impl TaskSpec {
    pub fn new(id: u32, tool: &str, args: Vec<(&str, ArgValue)>) -> Self {
        let args: IndexMap<String, ArgValue> =
            args.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let deps = args.values().flat_map(extract_refs).collect();
        Self {
            id: TaskId(id),
            tool: tool.to_string(),
            args,
            deps,
            is_join: tool == JOIN_TOOL,
        }
    }

    pub fn join(id: u32, inputs: &[u32]) -> Self {
        Self {
            id: TaskId(id),
            tool: JOIN_TOOL.to_string(),
            args: IndexMap::new(),
            deps: inputs.iter().copied().map(TaskId).collect(),
            is_join: true,
        }
    }

    /// Refs computed from the arguments alone (ignores join's positional inputs).
    pub fn arg_refs(&self) -> BTreeSet<TaskId> {
        self.args.values().flat_map(extract_refs).collect()
    }
}

/// Parser output before any registry checks.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanDraft {
    pub tasks: Vec<TaskSpec>,
    pub end_marker_seen: bool,
    pub raw_text: String,
}

/// A validated plan: ids strictly increasing, references backward, exactly one
/// trailing `join`, every tool known and every call matching its schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub tasks: Vec<TaskSpec>,
    pub join_id: TaskId,
}

impl Plan {
    pub fn task(&self, id: TaskId) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.iter().map(|t| t.id)
    }
}
