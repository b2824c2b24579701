use std::collections::BTreeSet;

use super::ast::{Plan, PlanDraft, TaskId};
use super::{Rule, ValidationError};
use crate::tools::ToolCatalog;

/// Checks every structural and schema rule, reporting all violations at once.
pub fn validate_plan(draft: &PlanDraft, catalog: &dyn ToolCatalog) -> Result<Plan, Vec<ValidationError>> {
    validate_with_external(draft, catalog, &BTreeSet::new())
}

/// Like [`validate_plan`], but `$id` references may also point at `external` ids:
/// results preserved from an earlier plan generation.
///
/// A reference resolves to an earlier task of this draft first; only ids that are not
/// earlier draft tasks fall through to `external`.
pub fn validate_with_external(
    draft: &PlanDraft,
    catalog: &dyn ToolCatalog,
    external: &BTreeSet<TaskId>,
) -> Result<Plan, Vec<ValidationError>> {
    let mut errors = Vec::new();
    let tasks = &draft.tasks;
    if tasks.is_empty() {
        errors.push(ValidationError::new(None, Rule::EmptyPlan, "plan contains no tasks"));
        return Err(errors);
    }

    let all_ids: BTreeSet<TaskId> = tasks.iter().map(|t| t.id).collect();
    let mut seen: BTreeSet<TaskId> = BTreeSet::new();
    let mut prev: Option<TaskId> = None;

    for (pos, task) in tasks.iter().enumerate() {
        let id = task.id;
        if seen.contains(&id) {
            errors.push(ValidationError::new(
                Some(id),
                Rule::DuplicateId,
                format!("duplicate task id {id}"),
            ));
        } else if let Some(p) = prev {
            if id <= p {
                errors.push(ValidationError::new(
                    Some(id),
                    Rule::NonIncreasingId,
                    format!("task id {id} does not increase after {p}"),
                ));
            }
        }

        for dep in &task.deps {
            if seen.contains(dep) || external.contains(dep) {
                continue;
            }
            let (rule, what) = if *dep == id {
                (Rule::SelfReference, format!("task {id} references itself"))
            } else if all_ids.contains(dep) {
                (Rule::ForwardReference, format!("forward reference to ${dep}"))
            } else {
                (Rule::UnknownReference, format!("reference to unknown task ${dep}"))
            };
            errors.push(ValidationError::new(Some(id), rule, what));
        }

        if task.is_join {
            if !task.args.is_empty() {
                errors.push(ValidationError::new(
                    Some(id),
                    Rule::JoinArguments,
                    "join takes no named arguments",
                ));
            }
            if pos + 1 != tasks.len() {
                errors.push(ValidationError::new(
                    Some(id),
                    Rule::JoinNotLast,
                    "join must be last",
                ));
            }
        } else {
            match catalog.lookup(&task.tool) {
                None => errors.push(ValidationError::new(
                    Some(id),
                    Rule::UnknownTool,
                    format!("unknown tool '{}'", task.tool),
                )),
                Some(desc) => {
                    for name in task.args.keys() {
                        if desc.arg(name).is_none() {
                            errors.push(ValidationError::new(
                                Some(id),
                                Rule::UnknownArgument,
                                format!("tool '{}' has no argument '{name}'", task.tool),
                            ));
                        }
                    }
                    for spec in desc.args.iter().filter(|a| a.required) {
                        if !task.args.contains_key(&spec.name) {
                            errors.push(ValidationError::new(
                                Some(id),
                                Rule::MissingArgument,
                                format!("tool '{}' requires argument '{}'", task.tool, spec.name),
                            ));
                        }
                    }
                }
            }
        }

        seen.insert(id);
        prev = Some(prev.map_or(id, |p| p.max(id)));
    }

    let joins: Vec<TaskId> = tasks.iter().filter(|t| t.is_join).map(|t| t.id).collect();
    match joins.len() {
        0 => errors.push(ValidationError::new(
            None,
            Rule::MissingJoin,
            "join must be last: plan has no join action",
        )),
        1 => {}
        _ => {
            for extra in &joins[..joins.len() - 1] {
                errors.push(ValidationError::new(
                    Some(*extra),
                    Rule::MultipleJoins,
                    "plan must contain exactly one join",
                ));
            }
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(Plan {
        tasks: tasks.clone(),
        join_id: *joins.last().expect("exactly one join"),
    })
}
