//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use lakeplan::config::EngineConfig;
use lakeplan::control::{Engine, RunTrace};
use lakeplan::fixtures;

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn scenario_dir(name: &str) -> PathBuf {
    workspace_root().join("fixtures/scenarios").join(name)
}

pub fn question(name: &str) -> String {
    std::fs::read_to_string(scenario_dir(name).join("question.txt")).unwrap().trim().to_string()
}

/// Builds the artwork lake under `dir` and returns its manifest path.
pub fn artwork_lake(dir: &Path) -> PathBuf {
    fixtures::build_dataset(&fixtures::default_source_root(), "artwork", &dir.join("lake")).unwrap()
}

/// Scripted configuration for a committed scenario, with `extra` TOML appended.
pub fn scenario_config(name: &str, dir: &Path, extra: &str) -> EngineConfig {
    let lake = artwork_lake(dir);
    let text = format!(
        "lake = {lake:?}\nartifact_dir = {art:?}\nfixtures = {fx:?}\n{extra}\n",
        lake = lake.display().to_string(),
        art = dir.join("artifacts").display().to_string(),
        fx = scenario_dir(name).display().to_string(),
    );
    EngineConfig::parse(&text, dir).unwrap()
}

pub fn engine(name: &str, dir: &Path, extra: &str) -> Engine {
    scenario_config(name, dir, extra).build_engine().unwrap()
}

pub async fn run(name: &str, dir: &Path, extra: &str) -> RunTrace {
    engine(name, dir, extra).run_query(&question(name)).await.unwrap()
}

pub mod strategies;
