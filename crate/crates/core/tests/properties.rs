//! Invariants checked over generated inputs.

mod common;

use std::collections::BTreeMap;

use lakeplan::bench::{diff_chart, rows_match, simulate_schedule, Latency, LatencyModel, PlotGold};
use lakeplan::builtin::{ChartKind, ChartSpec, Series};
use lakeplan::control::truncate_middle;
use lakeplan::executor::{ExecutorError, MemoryState};
use lakeplan::literal;
use lakeplan::plan_dsl::{compile_plan, parse_plan, render_plan, validate_plan, TaskId};
use lakeplan::task_graph::{build_dag, group_parallel_tasks};
use lakeplan::tools::{ArgSpec, NodeResult, ToolDescriptor, ValueType};
use proptest::prelude::*;
use serde_json::{json, Value};

use common::strategies;

fn probe_catalog() -> Vec<ToolDescriptor> {
    vec![ToolDescriptor::new(
        "probe",
        "",
        vec![
            ArgSpec::required("question", ValueType::Text),
            ArgSpec::optional("context", ValueType::Structured),
        ],
        ValueType::Structured,
    )]
}

fn chart_kind() -> impl Strategy<Value = ChartKind> {
    prop_oneof![
        Just(ChartKind::Bar),
        Just(ChartKind::Line),
        Just(ChartKind::Scatter),
        Just(ChartKind::Pie)
    ]
}

fn chart_value() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => -100.0f64..100.0,
        1 => Just(f64::NAN),
        1 => Just(f64::INFINITY),
    ]
}

fn chart_spec() -> impl Strategy<Value = ChartSpec> {
    (
        chart_kind(),
        prop::collection::vec("[a-z]{1,5}", 0..4),
        prop::collection::vec(("[a-z]{1,5}", prop::collection::vec(chart_value(), 0..4)), 0..3),
        prop_oneof![
            Just("chart.png".to_string()),
            Just("dir/chart.png".to_string()),
            Just(".png".to_string()),
            Just(".hidden.png".to_string()),
            Just("chart.jpg".to_string()),
            "[a-z]{1,6}\\.png",
        ],
    )
        .prop_map(|(kind, categories, series, output_path)| ChartSpec {
            kind,
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            categories,
            series: series.into_iter().map(|(label, values)| Series { label, values }).collect(),
            output_path,
        })
}

/// Independent statement of what a drawable chart spec is.
fn chart_is_drawable(s: &ChartSpec) -> bool {
    let n = s.categories.len();
    let values = || s.series.iter().flat_map(|x| x.values.iter());
    let shapes = n > 0 && !s.series.is_empty() && s.series.iter().all(|x| x.values.len() == n);
    let finite = values().all(|v| v.is_finite());
    let pie = s.kind != ChartKind::Pie || (s.series.len() == 1 && values().all(|v| *v >= 0.0));
    let path = s.output_path.len() > 4
        && s.output_path.ends_with(".png")
        && !s.output_path.contains('/')
        && !s.output_path.starts_with('.');
    shapes && finite && pie && path
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i32>().prop_map(Value::from),
        "[a-zA-Z0-9 ,:'\\[\\]{}]{0,10}".prop_map(Value::from),
    ];
    leaf.prop_recursive(3, 16, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-z]{1,4}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn rendered_plans_parse_back(plan in strategies::plan(8)) {
        let catalog = strategies::descriptors();
        let text = render_plan(&plan);
        let draft = parse_plan(&text).unwrap();
        prop_assert!(draft.end_marker_seen);
        prop_assert_eq!(validate_plan(&draft, &catalog).unwrap(), plan.clone());
        prop_assert_eq!(render_plan(&plan), text);
    }

    #[test]
    fn batches_respect_dependencies((text, deps) in strategies::dag_plan(12)) {
        let graph = build_dag(&compile_plan(&text, &probe_catalog()).unwrap()).unwrap();
        let schedule = group_parallel_tasks(&graph).unwrap();
        let mut batch_of = BTreeMap::new();
        for (i, b) in schedule.batches.iter().enumerate() {
            for id in b {
                prop_assert!(batch_of.insert(id.0, i).is_none(), "task {} scheduled twice", id.0);
            }
        }
        prop_assert_eq!(batch_of.len(), deps.len() + 1);
        for (id, ds) in &deps {
            for d in ds {
                prop_assert!(batch_of[d] < batch_of[id]);
            }
        }
        let join = batch_of[&graph.join_id.0];
        prop_assert_eq!(join, schedule.batches.len() - 1);
        prop_assert_eq!(schedule.order.len(), deps.len() + 1);
    }

    #[test]
    fn makespan_between_critical_path_and_sum(
        (text, _) in strategies::dag_plan(12),
        mean in 0.0f64..5.0,
        jitter in 0.0f64..2.0,
        seed in any::<u64>(),
        workers in 1usize..6,
    ) {
        let graph = build_dag(&compile_plan(&text, &probe_catalog()).unwrap()).unwrap();
        let model = LatencyModel {
            default: Latency::Jitter { mean, jitter },
            seed,
            ..LatencyModel::default()
        };
        let unbounded = simulate_schedule(&graph, &model, None);
        let bounded = simulate_schedule(&graph, &model, Some(workers));
        let serial = simulate_schedule(&graph, &model, Some(1));
        let eps = 1e-9;
        prop_assert!(unbounded.parallel_makespan <= bounded.parallel_makespan + eps);
        prop_assert!(bounded.parallel_makespan <= serial.parallel_makespan + eps);
        prop_assert!((serial.parallel_makespan - serial.sequential_makespan).abs() < eps);
        prop_assert!(bounded.reduction() >= -eps && bounded.reduction() <= 1.0 + eps);
    }

    #[test]
    fn uniform_latency_makespan_is_monotone_in_workers(
        (text, _) in strategies::dag_plan(12),
        latency in 0.5f64..3.0,
        workers in 1usize..6,
    ) {
        let graph = build_dag(&compile_plan(&text, &probe_catalog()).unwrap()).unwrap();
        let model = LatencyModel { default: Latency::Constant(latency), ..LatencyModel::default() };
        let fewer = simulate_schedule(&graph, &model, Some(workers));
        let more = simulate_schedule(&graph, &model, Some(workers + 1));
        prop_assert!(more.parallel_makespan <= fewer.parallel_makespan + 1e-9);
    }

    #[test]
    fn chart_validation_is_total(spec in chart_spec()) {
        let verdict = spec.validate();
        prop_assert_eq!(verdict.is_ok(), chart_is_drawable(&spec));
        if let Err(e) = verdict {
            prop_assert!(!e.0.is_empty());
        } else {
            let gold = PlotGold { chart: Some(spec.kind), categories: spec.categories.clone(), series: spec.series.clone() };
            prop_assert!(diff_chart(&gold, &spec).is_empty());
        }
    }

    #[test]
    fn truncation_keeps_both_ends(text in "[a-zé ]{0,60}", cap in 0usize..40) {
        let out = truncate_middle(&text, cap);
        let chars: Vec<char> = text.chars().collect();
        if chars.len() <= cap {
            prop_assert_eq!(out, text);
        } else {
            let head: String = chars[..cap / 2].iter().collect();
            let tail: String = chars[chars.len() - (cap - cap / 2)..].iter().collect();
            prop_assert!(out.starts_with(&head));
            prop_assert!(out.ends_with(&tail));
            let omitted = format!("{} characters omitted", chars.len() - cap);
            prop_assert!(out.contains(&omitted));
        }
    }

    #[test]
    fn row_matching_ignores_order(rows in prop::collection::vec(json_value(), 0..5), shift in 0usize..5) {
        let mut rotated = rows.clone();
        if !rotated.is_empty() {
            let k = shift % rotated.len();
            rotated.rotate_left(k);
        }
        prop_assert!(rows_match(&rows, &Value::Array(rotated)));
        let mut longer = rows.clone();
        longer.push(json!({"extra": true}));
        prop_assert!(!rows_match(&rows, &Value::Array(longer)));
    }

    #[test]
    fn json_literals_parse_to_themselves(v in json_value()) {
        prop_assert_eq!(literal::parse_value(&serde_json::to_string(&v).unwrap()), Some(v));
    }

    #[test]
    fn memory_is_write_once(id in 1u32..50) {
        let mut memory = MemoryState::new("q", "");
        memory.record(NodeResult::not_run(TaskId(id), "probe", "first", 0)).unwrap();
        let again = memory.record(NodeResult::not_run(TaskId(id), "probe", "second", 1));
        prop_assert_eq!(again, Err(ExecutorError::AlreadyWritten(TaskId(id))));
        prop_assert_eq!(memory.result(TaskId(id)).unwrap().error_message.as_deref(), Some("first"));
    }
}
