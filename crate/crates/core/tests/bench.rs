mod common;

use std::fs;
use std::path::Path;

use lakeplan::bench::{run_benchmark, BenchmarkManifest};
use lakeplan::config::EngineConfig;
use serde_json::json;

/// A scenario directory whose planner and replanner never produce a valid plan.
fn broken_planner(dir: &Path) -> EngineConfig {
    let fx = dir.join("fixtures");
    fs::create_dir_all(&fx).unwrap();
    let script = json!({"entries": [
        {"template": "planner", "responses": ["1. text2SQL(problem=\"Count the paintings\")"]},
        {"template": "replanner", "responses": ["2. text2SQL(problem=\"Count\")"]},
        {"template": "decision", "responses": ["Action: Replan(no plan)"]}
    ]});
    fs::write(fx.join("llm.json"), script.to_string()).unwrap();
    fs::write(fx.join("vqa.json"), r#"{"entries": []}"#).unwrap();
    let lake = common::artwork_lake(dir);
    let text = format!(
        "lake = {:?}\nartifact_dir = {:?}\nfixtures = {:?}\n[llm]\nmode = \"scripted\"\n",
        lake.display().to_string(),
        dir.join("artifacts").display().to_string(),
        fx.display().to_string()
    );
    EngineConfig::parse(&text, dir).unwrap()
}

#[tokio::test]
async fn unplannable_question_is_a_coverage_miss() {
    let dir = tempfile::tempdir().unwrap();
    let config = broken_planner(dir.path());
    let manifest: BenchmarkManifest = serde_json::from_value(json!({
        "name": "broken",
        "questions": [{
            "id": "count",
            "text": "How many paintings are there?",
            "categories": {"modality": "single", "output_type": "single_value"},
            "gold": {"kind": "value", "expected": 10}
        }]
    }))
    .unwrap();
    let out = dir.path().join("out");
    let report = run_benchmark(&manifest, &config, Some(&out), 1).await.unwrap();
    assert_eq!(report.plan_coverage(), 0.0);
    assert_eq!(report.accuracy(), 0.0);
    let q = &report.questions[0];
    assert!(!q.plan_generated);
    assert!(!q.evaluation.correct);
    assert!(out.join("count.trace.json").is_file());
    assert!(report.render_lines().contains("count"));
}

#[tokio::test]
async fn committed_benchmark_is_fully_answered() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = BenchmarkManifest::load(&common::scenario_dir("bench").join("manifest.json")).unwrap();
    manifest.lake = Some(common::artwork_lake(dir.path()));
    let config = common::scenario_config("bench", dir.path(), "");
    let report = run_benchmark(&manifest, &config, None, 3).await.unwrap();
    let wrong: Vec<_> = report
        .questions
        .iter()
        .filter(|q| !q.evaluation.correct)
        .map(|q| (&q.id, &q.evaluation.diagnosis))
        .collect();
    assert!(wrong.is_empty(), "{wrong:?}");
    let csv = report.render_csv();
    assert_eq!(csv.lines().count(), report.rows.len() + 1);
}
