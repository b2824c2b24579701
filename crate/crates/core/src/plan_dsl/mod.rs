//! The planner's textual plan language.
//!
//! A plan is a list of lines `idx. tool(arg_name=value, ...)`, ending with a
//! `join()` action and usually an `<END_OF_PLAN>` marker. Values are quoted strings,
//! numbers, bracketed lists, or `$id` references to earlier tasks.

mod ast;
mod parser;
mod render;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::{
    extract_refs, ArgValue, Literal, Plan, PlanDraft, TaskId, TaskSpec, Template, TemplatePart,
    JOIN_TOOL,
};
pub use parser::{parse_plan, END_MARKER};
pub use render::{render_literal, render_plan, render_task, render_tasks, render_value};
pub use validate::{validate_plan, validate_with_external};

/// A malformed plan line. The message is written so it can be fed back to the planner.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("line {line}: {reason} (in {text:?})")]
pub struct SyntaxError {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

impl SyntaxError {
    pub fn new(line: usize, text: &str, reason: impl Into<String>) -> Self {
        Self {
            line,
            text: text.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    EmptyPlan,
    DuplicateId,
    NonIncreasingId,
    ForwardReference,
    SelfReference,
    UnknownReference,
    MissingJoin,
    JoinNotLast,
    MultipleJoins,
    JoinArguments,
    UnknownTool,
    UnknownArgument,
    MissingArgument,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub task: Option<TaskId>,
    pub rule: Rule,
    pub message: String,
}

impl ValidationError {
    pub fn new(task: Option<TaskId>, rule: Rule, message: impl Into<String>) -> Self {
        Self {
            task,
            rule,
            message: message.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.task {
            Some(id) => write!(f, "task {id}: {}", self.message),
            None => write!(f, "plan: {}", self.message),
        }
    }
}

/// Either failure mode of turning planner text into a [`Plan`].
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanError {
    #[error("syntax error: {error}")]
    Syntax { error: SyntaxError },
    #[error("invalid plan: {}", join_messages(.errors))]
    Invalid { errors: Vec<ValidationError> },
}

fn join_messages(errors: &[ValidationError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl PlanError {
    /// One line per problem, suitable for replanning feedback.
    pub fn feedback(&self) -> String {
        match self {
            PlanError::Syntax { error } => error.to_string(),
            PlanError::Invalid { errors } => errors
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }
}

/// Parse and validate in one step.
pub fn compile_plan(
    text: &str,
    catalog: &dyn crate::tools::ToolCatalog,
) -> Result<Plan, PlanError> {
    let draft = parse_plan(text).map_err(|error| PlanError::Syntax { error })?;
    validate_plan(&draft, catalog).map_err(|errors| PlanError::Invalid { errors })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::tools::{ArgSpec, ToolDescriptor, ValueType};

    fn catalog() -> Vec<ToolDescriptor> {
        vec![
            ToolDescriptor::new(
                "text2SQL",
                "",
                vec![
                    ArgSpec::required("problem", ValueType::Text),
                    ArgSpec::optional("context", ValueType::Structured),
                ],
                ValueType::Structured,
            ),
            ToolDescriptor::new(
                "image_analysis",
                "",
                vec![
                    ArgSpec::required("question", ValueType::Text),
                    ArgSpec::required("context", ValueType::Structured),
                ],
                ValueType::Structured,
            ),
        ]
    }

    fn ids(set: &BTreeSet<TaskId>) -> Vec<u32> {
        set.iter().map(|t| t.0).collect()
    }

    const EXAMPLE_ONE: &str = "1. text2SQL(problem=\"Retrieve image paths and centuries\")\n2. image_analysis(question=\"Does the image depict war?\", context=$1)\n3. join()\n<END_OF_PLAN>";

    #[test]
    fn parses_three_line_plan() {
        let draft = parse_plan(EXAMPLE_ONE).unwrap();
        assert_eq!(draft.tasks.len(), 3);
        assert!(draft.end_marker_seen);
        assert_eq!(ids(&draft.tasks[1].deps), vec![1]);
        assert!(draft.tasks[2].is_join);
        assert_eq!(
            draft.tasks[0].args["problem"],
            ArgValue::text("Retrieve image paths and centuries")
        );
    }

    #[test]
    fn join_only_plan() {
        let draft = parse_plan("1. join()").unwrap();
        assert_eq!(draft.tasks.len(), 1);
        assert!(draft.tasks[0].deps.is_empty());
        assert!(!draft.end_marker_seen);
        let plan = validate_plan(&draft, &catalog()).unwrap();
        assert_eq!(render_plan(&plan), "1. join()\n<END_OF_PLAN>");
    }

    #[test]
    fn duplicate_id_is_reported() {
        let draft = parse_plan("1. text2SQL(problem=\"x\")\n1. join()").unwrap();
        let errs = validate_plan(&draft, &catalog()).unwrap_err();
        assert!(errs.iter().any(|e| e.rule == Rule::DuplicateId));
        // independent re-scan of the parsed ids
        let seen: Vec<u32> = draft.tasks.iter().map(|t| t.id.0).collect();
        assert!(seen.windows(2).any(|w| w[1] <= w[0]));
    }

    #[test]
    fn forward_reference_is_reported() {
        let draft = parse_plan(
            "1. text2SQL(problem=\"x\")\n2. image_analysis(question=\"q\", context=$5)\n5. join()",
        )
        .unwrap();
        let errs = validate_plan(&draft, &catalog()).unwrap_err();
        assert!(errs.iter().any(|e| e.rule == Rule::ForwardReference
            && e.task == Some(TaskId(2))
            && e.message.contains("forward reference")));
    }

    #[test]
    fn missing_join_is_reported() {
        let draft = parse_plan("1. text2SQL(problem=\"x\")").unwrap();
        let errs = validate_plan(&draft, &catalog()).unwrap_err();
        assert!(errs.iter().any(|e| e.rule == Rule::MissingJoin
            && e.message.contains("join must be last")));
    }

    #[test]
    fn unknown_tool_is_reported() {
        let draft = parse_plan("1. sql2text(problem=\"x\")\n2. join()").unwrap();
        let errs = validate_plan(&draft, &catalog()).unwrap_err();
        assert!(!catalog().iter().any(|d| d.name == "sql2text"));
        assert!(errs.iter().any(|e| e.rule == Rule::UnknownTool && e.message.contains("unknown tool")));
    }

    #[test]
    fn reports_all_violations_at_once() {
        let draft = parse_plan(
            "2. text2SQL(question=\"x\")\n1. image_analysis(question=\"q\", context=$9)\n3. join()\n4. join()",
        )
        .unwrap();
        let errs = validate_plan(&draft, &catalog()).unwrap_err();
        let rules: BTreeSet<String> = errs.iter().map(|e| format!("{:?}", e.rule)).collect();
        for want in [
            "UnknownArgument",
            "MissingArgument",
            "NonIncreasingId",
            "UnknownReference",
            "JoinNotLast",
            "MultipleJoins",
        ] {
            assert!(rules.contains(want), "missing {want} in {rules:?}");
        }
    }

    #[test]
    fn mixed_args_and_escapes() {
        let draft = parse_plan(
            r#"1. text2SQL(problem="a, \"quoted\" \$2 thing")
2. image_analysis(question="analyze images $1 and table $1", context=[$1, "x", 3])
3. join()"#,
        )
        .unwrap();
        assert_eq!(
            draft.tasks[0].args["problem"],
            ArgValue::text("a, \"quoted\" $2 thing")
        );
        assert!(draft.tasks[0].deps.is_empty());
        match &draft.tasks[1].args["question"] {
            ArgValue::Mixed(t) => assert_eq!(t.parts().len(), 4),
            other => panic!("expected mixed, got {other:?}"),
        }
        assert!(matches!(draft.tasks[1].args["context"], ArgValue::List(_)));
        let text = render_tasks(&draft.tasks);
        assert!(text.contains("\\$2"));
        let again = parse_plan(&text).unwrap();
        assert_eq!(again.tasks, draft.tasks);
    }

    #[test]
    fn extract_refs_cases() {
        assert!(extract_refs(&ArgValue::text("war")).is_empty());
        assert_eq!(ids(&extract_refs(&ArgValue::Ref(TaskId(2)))), vec![2]);
        let draft = parse_plan("1. x(a=\"analyze images $1 and table $3\")").unwrap();
        let arg = &draft.tasks[0].args["a"];
        assert_eq!(ids(&extract_refs(arg)), vec![1, 3]);
        // regex oracle over the source string
        let re = regex::Regex::new(r"(?:^|[^\\])\$(\d+)").unwrap();
        let oracle: BTreeSet<u32> = re
            .captures_iter("analyze images $1 and table $3")
            .map(|c| c[1].parse().unwrap())
            .collect();
        assert_eq!(ids(&extract_refs(arg)).into_iter().collect::<BTreeSet<_>>(), oracle);
    }

    #[test]
    fn mixed_ref_preserved_on_render() {
        let draft = parse_plan("1. text2SQL(problem=\"x\")\n2. image_analysis(question=\"paths from $1\", context=$1)\n3. join()").unwrap();
        let plan = validate_plan(&draft, &catalog()).unwrap();
        let text = render_plan(&plan);
        assert!(text.contains("\"paths from $1\""));
        let back = validate_plan(&parse_plan(&text).unwrap(), &catalog()).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn syntax_errors_carry_line_context() {
        for bad in [
            "1. text2SQL(problem='single')\n2. join()",
            "1 text2SQL(problem=\"x\")",
            "1. text2SQL(problem=\"x\"",
            "Thought: let me plan\n1. join()",
            "1. text2SQL(problem=\"x\", problem=\"y\")\n2. join()",
            "1. text2SQL($1)\n2. join()",
            "0. join()",
            "1. text2SQL(problem=\"unterminated)",
            "1. join() trailing",
        ] {
            let err = parse_plan(bad).unwrap_err();
            assert!(err.line >= 1, "{bad}: {err}");
            assert!(!err.reason.is_empty());
        }
        assert_eq!(parse_plan("  \n ").unwrap_err().line, 0);
    }

    #[test]
    fn lenient_whitespace_and_crlf() {
        let draft =
            parse_plan("1 .  text2SQL ( problem = \"x\" , )\r\n2.join( $1 )<END_OF_PLAN>\r\n").unwrap();
        assert_eq!(draft.tasks.len(), 2);
        assert!(draft.end_marker_seen);
        assert_eq!(ids(&draft.tasks[1].deps), vec![1]);
        assert_eq!(render_task(&draft.tasks[1]), "2. join($1)");
    }

    #[test]
    fn numbers_and_nested_lists() {
        let draft = parse_plan("1. x(a=-3, b=2.5, c=1e3, d=[[1, 2], []])").unwrap();
        let t = &draft.tasks[0];
        assert_eq!(t.args["a"], ArgValue::Constant(Literal::Int(-3)));
        assert_eq!(t.args["b"], ArgValue::Constant(Literal::Float(2.5)));
        assert_eq!(t.args["c"], ArgValue::Constant(Literal::Float(1000.0)));
        assert_eq!(parse_plan(&render_tasks(&draft.tasks)).unwrap().tasks, draft.tasks);
    }

    #[test]
    fn external_refs_for_replanning() {
        let draft = parse_plan("3. image_analysis(question=\"What is specifically depicted in the painting?\", context=$1)\n4. join()").unwrap();
        assert!(validate_plan(&draft, &catalog()).is_err());
        let external: BTreeSet<TaskId> = [TaskId(1)].into();
        let plan = validate_with_external(&draft, &catalog(), &external).unwrap();
        assert_eq!(plan.join_id, TaskId(4));
    }
}
