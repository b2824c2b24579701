//! Generators for random valid plans and random DAG-shaped plans.

use std::collections::BTreeMap;
use std::sync::Arc;

use lakeplan::builtin::{builtin_registry, BuiltinBackends, PrepMode, ScriptedVqa, StubRenderer};
use lakeplan::plan_dsl::{ArgValue, Literal, Plan, TaskId, TaskSpec, Template, TemplatePart};
use lakeplan::tools::{ToolDescriptor, ToolRegistry};
use proptest::prelude::*;

pub fn builtin_tools() -> ToolRegistry {
    builtin_registry(&BuiltinBackends {
        vqa: Arc::new(ScriptedVqa::default()),
        prep_mode: PrepMode::Direct,
        sandbox: None,
        renderer: Arc::new(StubRenderer),
    })
    .unwrap()
}

pub fn descriptors() -> Vec<ToolDescriptor> {
    builtin_tools().descriptors().to_vec()
}

fn free_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.?!'\"\\\\$=()\\[\\]\n\t]{0,16}"
}

/// Text that may follow a `$id` token without extending its digits.
fn template_text() -> impl Strategy<Value = String> {
    "[a-zA-Z ,.?'\"\\\\]{1,10}"
}

fn literal() -> impl Strategy<Value = Literal> {
    let leaf = prop_oneof![
        any::<i32>().prop_map(|i| Literal::Int(i64::from(i))),
        (-4000i32..4000).prop_map(|n| Literal::Float(f64::from(n) / 8.0 + 0.125)),
        free_text().prop_map(Literal::Str),
    ];
    leaf.prop_recursive(2, 8, 4, |inner| prop::collection::vec(inner, 0..4).prop_map(Literal::List))
}

/// Argument shape with reference slots resolved later against earlier ids.
#[derive(Debug, Clone)]
enum Shape {
    Const(Literal),
    Ref(usize),
    Mixed(String, Vec<(usize, String)>),
    List(Vec<Option<Literal>>, usize),
}

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        3 => literal().prop_map(Shape::Const),
        3 => any::<usize>().prop_map(Shape::Ref),
        2 => (
            prop_oneof![Just(String::new()), template_text()],
            prop::collection::vec((any::<usize>(), prop_oneof![Just(String::new()), template_text()]), 1..3)
        )
            .prop_map(|(head, rest)| Shape::Mixed(head, rest)),
        1 => (prop::collection::vec(prop::option::of(literal()), 0..3), any::<usize>())
            .prop_map(|(items, at)| Shape::List(items, at)),
    ]
}

fn resolve(shape: &Shape, earlier: &[u32]) -> ArgValue {
    let pick = |k: usize| TaskId(earlier[k % earlier.len()]);
    if earlier.is_empty() {
        return match shape {
            Shape::Const(l) => ArgValue::Constant(l.clone()),
            _ => ArgValue::text("no upstream"),
        };
    }
    match shape {
        Shape::Const(l) => ArgValue::Constant(l.clone()),
        Shape::Ref(k) => ArgValue::Ref(pick(*k)),
        Shape::Mixed(head, rest) => {
            let mut parts = Vec::new();
            if !head.is_empty() {
                parts.push(TemplatePart::Text(head.clone()));
            }
            for (k, text) in rest {
                parts.push(TemplatePart::Ref(pick(*k)));
                if !text.is_empty() {
                    parts.push(TemplatePart::Text(text.clone()));
                }
            }
            ArgValue::Mixed(Template(parts))
        }
        Shape::List(items, at) => {
            let mut out: Vec<ArgValue> = items
                .iter()
                .enumerate()
                .map(|(i, l)| match l {
                    Some(l) => ArgValue::Constant(l.clone()),
                    None => ArgValue::Ref(pick(i)),
                })
                .collect();
            let pos = at % (out.len() + 1);
            out.insert(pos, ArgValue::Ref(pick(*at)));
            ArgValue::List(out)
        }
    }
}

#[derive(Debug, Clone)]
struct TaskDraw {
    gap: u32,
    tool: usize,
    optional: Vec<bool>,
    shapes: Vec<Shape>,
}

fn task_draw() -> impl Strategy<Value = TaskDraw> {
    (
        1u32..4,
        any::<usize>(),
        prop::collection::vec(any::<bool>(), 4),
        prop::collection::vec(shape(), 4),
    )
        .prop_map(|(gap, tool, optional, shapes)| TaskDraw { gap, tool, optional, shapes })
}

/// Valid plans of 1..=`max_work` tool tasks plus a trailing join.
pub fn plan(max_work: usize) -> impl Strategy<Value = Plan> {
    let tools = descriptors();
    (
        1u32..4,
        prop::collection::vec(task_draw(), 1..=max_work),
        prop::option::of(prop::collection::vec(any::<usize>(), 0..3)),
    )
        .prop_map(move |(start, draws, join_inputs)| {
            let mut tasks = Vec::new();
            let mut earlier: Vec<u32> = Vec::new();
            let mut id = start - 1;
            for d in &draws {
                id += d.gap;
                let desc = &tools[d.tool % tools.len()];
                let mut args = Vec::new();
                for (i, spec) in desc.args.iter().enumerate() {
                    if spec.required || d.optional[i % d.optional.len()] {
                        args.push((spec.name.as_str(), resolve(&d.shapes[i % d.shapes.len()], &earlier)));
                    }
                }
                tasks.push(TaskSpec::new(id, &desc.name, args));
                earlier.push(id);
            }
            id += 1;
            let inputs: Vec<u32> = join_inputs
                .unwrap_or_default()
                .iter()
                .map(|k| earlier[k % earlier.len()])
                .collect();
            tasks.push(TaskSpec::join(id, &inputs));
            Plan {
                tasks,
                join_id: TaskId(id),
            }
        })
}

/// Plan text for a random DAG over nodes `1..=n` (n <= `max_nodes - 1`) with a
/// bare `join()`; dependencies are random subsets of earlier nodes.
pub fn dag_plan(max_nodes: usize) -> impl Strategy<Value = (String, BTreeMap<u32, Vec<u32>>)> {
    (1..max_nodes).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec(any::<bool>(), n), n).prop_map(move |bits| {
            let mut deps: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            let mut lines = Vec::new();
            for i in 1..=n as u32 {
                let ds: Vec<u32> = (1..i).filter(|j| bits[i as usize - 1][*j as usize - 1]).collect();
                let context = match ds.len() {
                    0 => String::new(),
                    _ => format!(
                        ", context=[{}]",
                        ds.iter().map(|d| format!("${d}")).collect::<Vec<_>>().join(", ")
                    ),
                };
                lines.push(format!("{i}. probe(question=\"q{i}\"{context})"));
                deps.insert(i, ds);
            }
            lines.push(format!("{}. join()", n + 1));
            (lines.join("\n"), deps)
        })
    })
}
