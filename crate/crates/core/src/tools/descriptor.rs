use std::fmt;

use serde::{Deserialize, Serialize};

/// Semantic type tag for tool arguments and outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueType {
    Text,
    Number,
    List,
    /// Rows, maps or any nested structure produced by an upstream task.
    Structured,
    Chart,
    Any,
}

impl ValueType {
    fn python_name(self) -> &'static str {
        match self {
            ValueType::Text => "str",
            ValueType::Number => "float",
            ValueType::List => "list",
            ValueType::Structured => "Union[str, list, dict]",
            ValueType::Chart => "chart",
            ValueType::Any => "Any",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ValueType,
    pub required: bool,
}

impl ArgSpec {
    pub fn required(name: &str, ty: ValueType) -> Self {
        Self {
            name: name.to_string(),
            ty,
            required: true,
        }
    }

    pub fn optional(name: &str, ty: ValueType) -> Self {
        Self {
            name: name.to_string(),
            ty,
            required: false,
        }
    }
}

/// Tool metadata shown to the planner and enforced at dispatch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    /// Free text, including the usage guidelines the planner must follow.
    pub description: String,
    pub args: Vec<ArgSpec>,
    pub output_type: ValueType,
}

impl ToolDescriptor {
    pub fn new(name: &str, description: &str, args: Vec<ArgSpec>, output_type: ValueType) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            args,
            output_type,
        }
    }

    pub fn arg(&self, name: &str) -> Option<&ArgSpec> {
        self.args.iter().find(|a| a.name == name)
    }

    /// Python-style signature, e.g. `text2SQL(problem: str, context: Optional[str]) -> list`.
    pub fn signature(&self) -> String {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                if a.required {
                    format!("{}: {}", a.name, a.ty.python_name())
                } else {
                    format!("{}: Optional[{}]", a.name, a.ty.python_name())
                }
            })
            .collect();
        format!(
            "{}({}) -> {}",
            self.name,
            args.join(", "),
            self.output_type.python_name()
        )
    }
}

impl fmt::Display for ToolDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:\n{}", self.signature(), self.description)
    }
}

/// Anything that can answer "which tool is this name, and what does it accept".
pub trait ToolCatalog {
    fn lookup(&self, name: &str) -> Option<&ToolDescriptor>;
}

impl ToolCatalog for [ToolDescriptor] {
    fn lookup(&self, name: &str) -> Option<&ToolDescriptor> {
        self.iter().find(|d| d.name == name)
    }
}

impl ToolCatalog for Vec<ToolDescriptor> {
    fn lookup(&self, name: &str) -> Option<&ToolDescriptor> {
        self.as_slice().lookup(name)
    }
}

/// The tool catalogue as the planner sees it: names, numbered descriptions and
/// the count including the trailing `join` action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolMenu {
    pub tool_names: String,
    pub tool_descriptions: String,
    pub num_tools: usize,
}

impl ToolMenu {
    /// `None` when there are no tools to offer.
    pub fn from_descriptors(tools: &[ToolDescriptor]) -> Option<Self> {
        if tools.is_empty() {
            return None;
        }
        let mut names: Vec<&str> = tools.iter().map(|t| t.name.as_str()).collect();
        names.push(crate::plan_dsl::JOIN_TOOL);
        let descriptions: Vec<String> = tools
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {t}", i + 1))
            .collect();
        Some(Self {
            tool_names: names.join(", "),
            tool_descriptions: descriptions.join("\n\n"),
            num_tools: tools.len() + 1,
        })
    }
}
