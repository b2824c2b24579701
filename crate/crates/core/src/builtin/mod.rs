//! The expert tools: text2SQL, image_analysis, text_analysis, intent_tables,
//! data_preparation and data_plotting.

mod image;
mod intent;
mod plot;
mod prepare;
mod sandbox;
mod text;
mod text2sql;

use std::sync::Arc;

use serde_json::Value;

use crate::literal;
use crate::tools::{ToolError, ToolRegistry};

pub use image::{
    HttpVqaClient, ImageAnalysis, ScriptedVqa, VqaAnswer, VqaClient, VqaEntry, VqaError, VqaMode,
    VqaRequest, VqaTable,
};
pub use intent::IntentTables;
pub use plot::{spec_path, ChartKind, ChartRenderer, ChartSpec, DataPlotting, SandboxRenderer, Series, SpecInvalid, StubRenderer};
pub use prepare::{DataPreparation, PrepMode};
pub use sandbox::{SandboxClient, SandboxRequest, SandboxResponse};
pub use text::TextAnalysis;
pub use text2sql::{SqlArtifact, Text2Sql};

/// Backends the built-in tools need.
#[derive(Clone)]
pub struct BuiltinBackends {
    pub vqa: Arc<dyn VqaClient>,
    pub prep_mode: PrepMode,
    pub sandbox: Option<Arc<SandboxClient>>,
    pub renderer: Arc<dyn ChartRenderer>,
}

/// Registry with every built-in tool, in the order the planner sees them.
pub fn builtin_registry(backends: &BuiltinBackends) -> Result<ToolRegistry, ToolError> {
    let mut reg = ToolRegistry::new();
    let err = |e: crate::tools::RegistryError| ToolError::new(e.to_string());
    reg.register(Arc::new(Text2Sql::new())).map_err(err)?;
    reg.register(Arc::new(ImageAnalysis::new(Arc::clone(&backends.vqa)))).map_err(err)?;
    reg.register(Arc::new(TextAnalysis::new())).map_err(err)?;
    reg.register(Arc::new(IntentTables::new())).map_err(err)?;
    reg.register(Arc::new(DataPreparation::new(backends.prep_mode, backends.sandbox.clone())))
        .map_err(err)?;
    reg.register(Arc::new(DataPlotting::new(Arc::clone(&backends.renderer)))).map_err(err)?;
    Ok(reg)
}

/// Body of the first fenced code block, optionally restricted to one language tag.
pub(crate) fn fenced_block<'a>(text: &'a str, lang: Option<&str>) -> Option<&'a str> {
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let line_end = after.find('\n')?;
        let tag = after[..line_end].trim();
        let body_start = &after[line_end + 1..];
        let close = body_start.find("```")?;
        let body = &body_start[..close];
        if lang.is_none_or(|l| tag.eq_ignore_ascii_case(l) || tag.is_empty()) {
            return Some(body.trim());
        }
        rest = &body_start[close + 3..];
    }
    None
}

/// Decodes a structured value from model output: whole text, fenced block, then
/// the first embedded map or list.
pub(crate) fn parse_structure(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Some(v) = literal::parse_value(trimmed) {
        return Some(v);
    }
    if let Some(v) = fenced_block(trimmed, None).and_then(literal::parse_value) {
        return Some(v);
    }
    let map_at = trimmed.find('{');
    let list_at = trimmed.find('[');
    let map = || literal::first_map(trimmed).map(Value::Object);
    let list = || literal::first_list(trimmed).map(Value::Array);
    match (map_at, list_at) {
        (Some(m), Some(l)) if l < m => list().or_else(map),
        _ => map().or_else(list),
    }
}

/// Upstream text that is really a serialized structure is decoded back.
pub(crate) fn decode_context(v: &Value) -> Value {
    match v {
        Value::String(s) => literal::parse_value(s).unwrap_or_else(|| v.clone()),
        other => other.clone(),
    }
}

pub(crate) fn feedback_text(errors: &[String]) -> String {
    if errors.is_empty() {
        return String::new();
    }
    let mut out = String::from("\n\nYour previous answer failed:");
    for e in errors {
        out.push_str("\n- ");
        out.push_str(e);
    }
    out.push_str("\nCorrect the problem and answer again.");
    out
}
