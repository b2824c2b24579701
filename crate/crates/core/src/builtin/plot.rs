//! Declarative charts: the model proposes a [`ChartSpec`], the engine validates
//! it and hands it to a [`ChartRenderer`].

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{decode_context, feedback_text, parse_structure, SandboxClient, SandboxRequest};
use crate::llm::{TemplateId, Vars};
use crate::tools::{
    required_text, value_text, ArgSpec, Args, Tool, ToolContext, ToolDescriptor, ToolError, ToolOutput,
    ValueType,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Bar,
    Line,
    Scatter,
    Pie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub x_label: String,
    #[serde(default)]
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<Series>,
    pub output_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid chart spec: {}", .0.join("; "))]
pub struct SpecInvalid(pub Vec<String>);

impl ChartSpec {
    pub fn validate(&self) -> Result<(), SpecInvalid> {
        let mut problems = Vec::new();
        if self.categories.is_empty() {
            problems.push("categories must not be empty".to_string());
        }
        if self.series.is_empty() {
            problems.push("at least one series is required".to_string());
        }
        for s in &self.series {
            if s.values.len() != self.categories.len() {
                problems.push(format!(
                    "series '{}' has {} values for {} categories",
                    s.label,
                    s.values.len(),
                    self.categories.len()
                ));
            }
            if s.values.iter().any(|v| !v.is_finite()) {
                problems.push(format!("series '{}' has a non-finite value", s.label));
            }
        }
        if self.kind == ChartKind::Pie {
            if self.series.len() > 1 {
                problems.push("a pie chart takes exactly one series".to_string());
            }
            if self.series.iter().flat_map(|s| &s.values).any(|v| *v < 0.0) {
                problems.push("pie values must be non-negative".to_string());
            }
        }
        let name = self.output_path.as_str();
        let stem = name.strip_suffix(".png").unwrap_or("");
        if stem.is_empty() {
            problems.push(format!("output_path '{name}' must be a file name ending in .png"));
        } else if name.contains(['/', '\\']) || name.starts_with('.') {
            problems.push(format!("output_path '{name}' must be a plain file name"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SpecInvalid(problems))
        }
    }
}

#[async_trait]
pub trait ChartRenderer: Send + Sync {
    /// Draws `spec` into `target`. Only called with validated specs.
    async fn render(&self, spec: &ChartSpec, target: &Path) -> Result<(), ToolError>;
}

/// Writes a 1x1 PNG placeholder. Used in tests and when no renderer service is
/// configured.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubRenderer;

const PLACEHOLDER_PNG: &str =
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA60e6kgAAAABJRU5ErkJggg==";

#[async_trait]
impl ChartRenderer for StubRenderer {
    async fn render(&self, spec: &ChartSpec, target: &Path) -> Result<(), ToolError> {
        if spec.series.iter().any(|s| s.values.len() != spec.categories.len()) {
            return Err(ToolError::new("renderer: series length does not match categories"));
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(PLACEHOLDER_PNG)
            .expect("constant decodes");
        tokio::fs::write(target, bytes)
            .await
            .map_err(|e| ToolError::new(format!("{}: {e}", target.display())))
    }
}

/// Renders through the sandbox with a fixed matplotlib script generated from the spec.
#[derive(Debug, Clone)]
pub struct SandboxRenderer {
    client: Arc<SandboxClient>,
}

impl SandboxRenderer {
    pub fn new(client: Arc<SandboxClient>) -> Self {
        Self { client }
    }
}

const RENDER_SCRIPT: &str = r#"import json, os
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
spec = INPUTS
cats = spec["categories"]
fig, ax = plt.subplots()
if spec["kind"] == "pie":
    ax.pie(spec["series"][0]["values"], labels=cats)
else:
    n = len(spec["series"])
    for i, s in enumerate(spec["series"]):
        if spec["kind"] == "bar":
            w = 0.8 / n
            ax.bar([j + i * w for j in range(len(cats))], s["values"], width=w, label=s["label"])
        elif spec["kind"] == "line":
            ax.plot(cats, s["values"], label=s["label"])
        else:
            ax.scatter(cats, s["values"], label=s["label"])
    if spec["kind"] == "bar":
        ax.set_xticks([j + 0.4 - 0.4 / n for j in range(len(cats))])
        ax.set_xticklabels(cats)
    ax.set_xlabel(spec.get("x_label", ""))
    ax.set_ylabel(spec.get("y_label", ""))
    if n > 1:
        ax.legend()
ax.set_title(spec.get("title", ""))
fig.savefig(os.path.join(ARTIFACT_DIR, spec["output_path"]))
print(json.dumps({"saved": spec["output_path"]}))
"#;

#[async_trait]
impl ChartRenderer for SandboxRenderer {
    async fn render(&self, spec: &ChartSpec, target: &Path) -> Result<(), ToolError> {
        let dir = target.parent().map(Path::to_path_buf).unwrap_or_default();
        let reply = self
            .client
            .run(&SandboxRequest {
                script: RENDER_SCRIPT.to_string(),
                inputs: serde_json::to_value(spec).expect("spec serializes"),
                artifact_dir: dir,
            })
            .await?;
        let expected = spec.output_path.as_str();
        if !reply.files.iter().any(|f| Path::new(f).ends_with(expected)) {
            return Err(ToolError::new(format!("renderer did not produce {expected}")));
        }
        Ok(())
    }
}

pub struct DataPlotting {
    descriptor: ToolDescriptor,
    renderer: Arc<dyn ChartRenderer>,
}

const DESCRIPTION: &str = " - Plots prepared data as a bar, line, scatter or pie chart and saves it as a .png file.
 - `context` must be the output of data_preparation (or another action) holding the numbers to plot.
 - Returns the chart specification and the saved file.";

const OUTPUT_FORMAT: &str = r#"Output only a JSON chart specification with the keys "kind" (one of "bar", "line", "scatter", "pie"), "title", "x_label", "y_label", "categories" (list of labels), "series" (list of {"label": ..., "values": [numbers, one per category]}) and "output_path" (a file name ending in .png)."#;

impl DataPlotting {
    pub fn new(renderer: Arc<dyn ChartRenderer>) -> Self {
        Self {
            descriptor: ToolDescriptor::new(
                "data_plotting",
                DESCRIPTION,
                vec![
                    ArgSpec::required("question", ValueType::Text),
                    ArgSpec::required("context", ValueType::Structured),
                ],
                ValueType::Structured,
            ),
            renderer,
        }
    }

    async fn attempt(&self, args: &Args, ctx: &ToolContext, errors: &[String]) -> Result<ToolOutput, ToolError> {
        let question = required_text(args, "question")?;
        let data = decode_context(args.get("context").unwrap_or(&Value::Null));
        if is_empty(&data) {
            return Err(ToolError::new("no data to plot"));
        }
        let mut vars = Vars::new();
        vars.insert("question".into(), question);
        vars.insert("input".into(), format!("Input data: {}", value_text(&data)));
        vars.insert("feedback".into(), feedback_text(errors));
        vars.insert("output_format".into(), OUTPUT_FORMAT.into());
        let response = ctx.complete(TemplateId::DataPlotting, &vars).await?;
        let raw = parse_structure(&response.text)
            .ok_or_else(|| ToolError::new(format!("malformed output, expected a chart specification: {}", response.text.trim())))?;
        let spec: ChartSpec = serde_json::from_value(raw)
            .map_err(|e| ToolError::new(format!("invalid chart spec: {e}")))?;
        spec.validate().map_err(|e| ToolError::new(e.to_string()))?;

        std::fs::create_dir_all(&ctx.artifact_dir)
            .map_err(|e| ToolError::new(format!("{}: {e}", ctx.artifact_dir.display())))?;
        let image = ctx.artifact_dir.join(&spec.output_path);
        self.renderer.render(&spec, &image).await?;
        let spec_file = spec_path(&image);
        let body = serde_json::to_string_pretty(&spec).expect("spec serializes");
        std::fs::write(&spec_file, body).map_err(|e| ToolError::new(format!("{}: {e}", spec_file.display())))?;
        Ok(ToolOutput::new(
            serde_json::to_value(&spec).expect("spec serializes"),
            format!("Saved a {:?} chart to {}.", spec.kind, spec.output_path).to_lowercase(),
        )
        .with_details(json!({
            "file": image.to_string_lossy(),
            "spec_file": spec_file.to_string_lossy(),
        })))
    }
}

/// `chart.png` is described by `chart.chart.json` next to it.
pub fn spec_path(image: &Path) -> PathBuf {
    image.with_extension("chart.json")
}

fn is_empty(v: &Value) -> bool {
    match v {
        Value::Null => true,
        Value::String(s) => s.trim().is_empty(),
        Value::Array(a) => a.is_empty(),
        Value::Object(m) => m.is_empty(),
        _ => false,
    }
}

#[async_trait]
impl Tool for DataPlotting {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    async fn run(&self, args: &Args, ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        self.attempt(args, ctx, &[]).await
    }

    async fn repair(&self, args: &Args, ctx: &ToolContext, errors: &[String]) -> Result<ToolOutput, ToolError> {
        self.attempt(args, ctx, errors).await
    }
}
