//! Compile natural-language questions into validated task graphs, run them over a
//! multi-modal data lake with bounded parallelism, and decide or replan.

pub mod bench;
pub mod builtin;
pub mod config;
pub mod control;
pub mod executor;
pub mod fixtures;
pub mod lake;
pub mod literal;
pub mod metrics;
pub mod mocks;
pub mod llm;
pub mod plan_dsl;
pub mod task_graph;
pub mod tools;
