//! Execution DAG built from a validated plan: topological order, level batches,
//! depth, and the affected sub-graph used for selective replanning.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan_dsl::{Plan, PlanError, TaskId, TaskSpec, ValidationError, Rule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("dependency cycle through task {0}")]
    Cycle(TaskId),
    #[error("unknown node {0}")]
    UnknownNode(TaskId),
    #[error("edge endpoint {0} is not a node")]
    DanglingEdge(TaskId),
    #[error("replacement plan rejected: {0}")]
    Splice(PlanError),
}

/// G = (V, E). An edge `(from, to)` means `to` consumes the output of `from`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub nodes: BTreeMap<TaskId, TaskSpec>,
    pub edges: BTreeSet<(TaskId, TaskId)>,
    pub join_id: TaskId,
    /// Nodes carried over from a previous generation whose results are reused.
    #[serde(default)]
    pub reusable: BTreeSet<TaskId>,
}

/// Level schedule: `batches[k]` holds the nodes whose longest path from a source
/// has length `k`. `order` is the batches flattened, ascending id within a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSchedule {
    pub batches: Vec<Vec<TaskId>>,
    pub order: Vec<TaskId>,
}

impl BatchSchedule {
    pub fn depth(&self) -> usize {
        self.batches.len()
    }

    /// Widest batch, not counting the join marker.
    pub fn max_width(&self, join: TaskId) -> usize {
        self.batches
            .iter()
            .map(|b| b.iter().filter(|id| **id != join).count())
            .max()
            .unwrap_or(0)
    }
}

/// Builds the DAG. A `join()` without explicit inputs depends on every sink.
pub fn build_dag(plan: &Plan) -> Result<TaskGraph, GraphError> {
    let nodes: BTreeMap<TaskId, TaskSpec> = plan.tasks.iter().map(|t| (t.id, t.clone())).collect();
    assemble(nodes, plan.join_id, BTreeSet::new())
}

fn assemble(
    nodes: BTreeMap<TaskId, TaskSpec>,
    join_id: TaskId,
    reusable: BTreeSet<TaskId>,
) -> Result<TaskGraph, GraphError> {
    let mut edges = BTreeSet::new();
    for task in nodes.values().filter(|t| !t.is_join) {
        for dep in &task.deps {
            if !nodes.contains_key(dep) {
                return Err(GraphError::DanglingEdge(*dep));
            }
            edges.insert((*dep, task.id));
        }
    }
    let join = nodes.get(&join_id).ok_or(GraphError::UnknownNode(join_id))?;
    if join.deps.is_empty() {
        let has_out: BTreeSet<TaskId> = edges.iter().map(|(from, _)| *from).collect();
        for id in nodes.keys().filter(|id| **id != join_id && !has_out.contains(id)) {
            edges.insert((*id, join_id));
        }
    } else {
        for dep in &join.deps {
            if !nodes.contains_key(dep) {
                return Err(GraphError::DanglingEdge(*dep));
            }
            edges.insert((*dep, join_id));
        }
    }
    let graph = TaskGraph {
        nodes,
        edges,
        join_id,
        reusable,
    };
    topological_sort(&graph)?;
    Ok(graph)
}

impl TaskGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn predecessors(&self, id: TaskId) -> BTreeSet<TaskId> {
        self.edges
            .iter()
            .filter(|(_, to)| *to == id)
            .map(|(from, _)| *from)
            .collect()
    }

    pub fn successors(&self, id: TaskId) -> BTreeSet<TaskId> {
        self.edges
            .iter()
            .filter(|(from, _)| *from == id)
            .map(|(_, to)| *to)
            .collect()
    }

    /// Non-join tasks in ascending id order.
    pub fn work_nodes(&self) -> impl Iterator<Item = &TaskSpec> {
        self.nodes.values().filter(|t| !t.is_join)
    }

    /// Text edge list, one `from -> to` per line.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for (from, to) in &self.edges {
            let _ = writeln!(out, "{from} -> {to}");
        }
        out
    }

    /// DOT description for inspection tools.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph plan {\n  rankdir=LR;\n");
        for task in self.nodes.values() {
            let shape = if task.is_join { "doublecircle" } else { "box" };
            let _ = writeln!(
                out,
                "  n{} [label=\"{}. {}\", shape={}];",
                task.id, task.id, task.tool, shape
            );
        }
        for (from, to) in &self.edges {
            let _ = writeln!(out, "  n{from} -> n{to};");
        }
        out.push_str("}\n");
        out
    }
}

/// Kahn's algorithm; ties go to the smallest ready id.
pub fn topological_sort(g: &TaskGraph) -> Result<Vec<TaskId>, GraphError> {
    let mut indegree: BTreeMap<TaskId, usize> = g.nodes.keys().map(|id| (*id, 0)).collect();
    let mut succ: BTreeMap<TaskId, Vec<TaskId>> = BTreeMap::new();
    for (from, to) in &g.edges {
        if !g.nodes.contains_key(from) {
            return Err(GraphError::DanglingEdge(*from));
        }
        *indegree.get_mut(to).ok_or(GraphError::DanglingEdge(*to))? += 1;
        succ.entry(*from).or_default().push(*to);
    }
    let mut ready: BinaryHeap<Reverse<TaskId>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| Reverse(*id))
        .collect();
    let mut order = Vec::with_capacity(g.nodes.len());
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id);
        for next in succ.get(&id).into_iter().flatten() {
            let d = indegree.get_mut(next).expect("checked above");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(*next));
            }
        }
    }
    if order.len() != g.nodes.len() {
        let stuck = indegree
            .iter()
            .find(|(id, d)| **d > 0 && !order.contains(id))
            .map(|(id, _)| *id)
            .unwrap_or(g.join_id);
        return Err(GraphError::Cycle(stuck));
    }
    Ok(order)
}

/// ASAP level scheduling: a node's batch is its longest-path distance from a source.
pub fn group_parallel_tasks(g: &TaskGraph) -> Result<BatchSchedule, GraphError> {
    let order = topological_sort(g)?;
    let mut level: BTreeMap<TaskId, usize> = BTreeMap::new();
    for id in &order {
        let l = g
            .predecessors(*id)
            .iter()
            .map(|p| level[p] + 1)
            .max()
            .unwrap_or(0);
        level.insert(*id, l);
    }
    let depth = level.values().map(|l| l + 1).max().unwrap_or(0);
    let mut batches: Vec<Vec<TaskId>> = vec![Vec::new(); depth];
    for (id, l) in &level {
        batches[*l].push(*id);
    }
    let order = batches.iter().flatten().copied().collect();
    Ok(BatchSchedule { batches, order })
}

/// Number of batches, i.e. longest path length + 1; zero for the empty graph.
pub fn depth(g: &TaskGraph) -> usize {
    group_parallel_tasks(g).map(|s| s.depth()).unwrap_or(0)
}

/// `seeds` plus all of their transitive descendants.
pub fn affected_subgraph(g: &TaskGraph, seeds: &BTreeSet<TaskId>) -> Result<BTreeSet<TaskId>, GraphError> {
    if let Some(bad) = seeds.iter().find(|s| !g.nodes.contains_key(s)) {
        return Err(GraphError::UnknownNode(*bad));
    }
    let mut out = seeds.clone();
    let mut queue: VecDeque<TaskId> = seeds.iter().copied().collect();
    while let Some(id) = queue.pop_front() {
        for next in g.successors(id) {
            if out.insert(next) {
                queue.push_back(next);
            }
        }
    }
    Ok(out)
}

/// Replaces everything outside `keep` with `replacement`.
///
/// Replacement ids are renumbered contiguously, starting just above the largest
/// non-join id of `g`, so task ids are never reused across generations. A `$k`
/// inside the replacement binds to an earlier replacement task when one has id `k`,
/// otherwise to the preserved node `k`; anything else is rejected.
pub fn splice(g: &TaskGraph, keep: &BTreeSet<TaskId>, replacement: &Plan) -> Result<TaskGraph, GraphError> {
    if let Some(bad) = keep.iter().find(|k| !g.nodes.contains_key(k)) {
        return Err(GraphError::UnknownNode(*bad));
    }
    let base = g.work_nodes().map(|t| t.id.0).max().unwrap_or(0);

    let preserved: BTreeSet<TaskId> = keep.iter().filter(|k| **k != g.join_id).copied().collect();
    let mut renumber: BTreeMap<TaskId, TaskId> = BTreeMap::new();
    let mut nodes: BTreeMap<TaskId, TaskSpec> =
        preserved.iter().map(|k| (*k, g.nodes[k].clone())).collect();
    let mut errors = Vec::new();
    let mut join_id = None;

    for (offset, task) in replacement.tasks.iter().enumerate() {
        let new_id = TaskId(base + 1 + offset as u32);
        let earlier = renumber.clone();
        let resolve = |k: TaskId| -> Option<TaskId> {
            earlier
                .get(&k)
                .copied()
                .or_else(|| preserved.contains(&k).then_some(k))
        };
        let mut ok = true;
        for dep in &task.deps {
            if resolve(*dep).is_none() {
                ok = false;
                errors.push(ValidationError::new(
                    Some(task.id),
                    Rule::UnknownReference,
                    format!("reference to dropped or unknown task ${dep}"),
                ));
            }
        }
        if ok {
            let map = |k: TaskId| resolve(k).expect("resolved above");
            let spec = TaskSpec {
                id: new_id,
                tool: task.tool.clone(),
                args: task.args.iter().map(|(n, v)| (n.clone(), v.map_refs(&map))).collect(),
                deps: task.deps.iter().map(|d| map(*d)).collect(),
                is_join: task.is_join,
            };
            nodes.insert(new_id, spec);
        }
        if task.is_join {
            join_id = Some(new_id);
        }
        renumber.insert(task.id, new_id);
    }
    if !errors.is_empty() {
        return Err(GraphError::Splice(PlanError::Invalid { errors }));
    }
    let join_id = join_id.expect("validated plan has a join");
    assemble(nodes, join_id, preserved)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan_dsl::{parse_plan, validate_with_external, ArgValue};
    use crate::tools::{ArgSpec, ToolDescriptor, ValueType};

    fn any_tool(name: &str) -> ToolDescriptor {
        ToolDescriptor::new(
            name,
            "",
            vec![
                ArgSpec::optional("question", ValueType::Text),
                ArgSpec::optional("problem", ValueType::Text),
                ArgSpec::optional("context", ValueType::Structured),
            ],
            ValueType::Any,
        )
    }

    fn catalog() -> Vec<ToolDescriptor> {
        ["text2SQL", "image_analysis", "data_preparation", "data_plotting"]
            .into_iter()
            .map(any_tool)
            .collect()
    }

    fn plan(text: &str, external: &[u32]) -> Plan {
        let ext = external.iter().copied().map(TaskId).collect();
        validate_with_external(&parse_plan(text).unwrap(), &catalog(), &ext).unwrap()
    }

    fn edges(g: &TaskGraph) -> Vec<(u32, u32)> {
        g.edges.iter().map(|(a, b)| (a.0, b.0)).collect()
    }

    fn set(ids: &[u32]) -> BTreeSet<TaskId> {
        ids.iter().copied().map(TaskId).collect()
    }

    fn batches(s: &BatchSchedule) -> Vec<Vec<u32>> {
        s.batches.iter().map(|b| b.iter().map(|t| t.0).collect()).collect()
    }

    /// Graph straight from an edge list, without a join fan-in.
    pub(crate) fn raw(n: u32, e: &[(u32, u32)]) -> TaskGraph {
        TaskGraph {
            nodes: (1..=n).map(|i| (TaskId(i), TaskSpec::new(i, "image_analysis", vec![]))).collect(),
            edges: e.iter().map(|(a, b)| (TaskId(*a), TaskId(*b))).collect(),
            join_id: TaskId(n),
            reusable: BTreeSet::new(),
        }
    }

    #[test]
    fn example_one_is_a_chain_into_join() {
        let p = plan(
            "1. text2SQL(problem=\"Retrieve painting metadata\")\n2. image_analysis(question=\"Does the image depict war?\", context=$1)\n3. data_preparation(question=\"count\", context=$2)\n4. data_plotting(question=\"plot\", context=$3)\n5. join()",
            &[],
        );
        let g = build_dag(&p).unwrap();
        assert_eq!(edges(&g), vec![(1, 2), (2, 3), (3, 4), (4, 5)]);
        assert_eq!(depth(&g), 5);
    }

    #[test]
    fn join_only_plan_has_no_edges() {
        let g = build_dag(&plan("1. join()", &[])).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges.is_empty());
        assert_eq!(depth(&g), 1);
    }

    #[test]
    fn example_three_batches() {
        let g = build_dag(&plan(
            "1. text2SQL(problem=\"renaissance paintings\")\n2. image_analysis(question=\"war?\", context=$1)\n3. image_analysis(question=\"sword?\", context=$1)\n4. data_preparation(question=\"count\", context=[$2, $3])\n5. join()",
            &[],
        ))
        .unwrap();
        assert!(g.edges.contains(&(TaskId(1), TaskId(2))));
        assert!(g.edges.contains(&(TaskId(1), TaskId(3))));
        let s = group_parallel_tasks(&g).unwrap();
        assert_eq!(batches(&s), vec![vec![1], vec![2, 3], vec![4], vec![5]]);
    }

    #[test]
    fn explicit_join_inputs() {
        let g = build_dag(&plan(
            "1. text2SQL(problem=\"a\")\n2. text2SQL(problem=\"b\")\n3. join($1)",
            &[],
        ))
        .unwrap();
        assert_eq!(edges(&g), vec![(1, 3)]);
    }

    #[test]
    fn sort_and_batch_small_cases() {
        let g = raw(3, &[(1, 3), (2, 3)]);
        assert_eq!(topological_sort(&g).unwrap(), vec![TaskId(1), TaskId(2), TaskId(3)]);
        assert_eq!(batches(&group_parallel_tasks(&g).unwrap()), vec![vec![1, 2], vec![3]]);
        assert_eq!(depth(&g), 2);

        let chain = raw(3, &[(1, 2), (2, 3)]);
        assert_eq!(topological_sort(&chain).unwrap(), vec![TaskId(1), TaskId(2), TaskId(3)]);
        assert_eq!(batches(&group_parallel_tasks(&chain).unwrap()), vec![vec![1], vec![2], vec![3]]);
        assert_eq!(depth(&raw(5, &[(1, 2), (2, 3), (3, 4), (4, 5)])), 5);
        assert_eq!(depth(&raw(1, &[])), 1);

        let empty = TaskGraph {
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
            join_id: TaskId(1),
            reusable: BTreeSet::new(),
        };
        assert!(topological_sort(&empty).unwrap().is_empty());
        assert_eq!(depth(&empty), 0);
    }

    #[test]
    fn topological_sort_respects_edges_exhaustive() {
        // every DAG on 4 nodes with forward edges only: check the order is valid
        let pairs: Vec<(u32, u32)> = (1..=4).flat_map(|a| (a + 1..=4).map(move |b| (a, b))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let e: Vec<(u32, u32)> = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, p)| *p)
                .collect();
            let g = raw(4, &e);
            let order = topological_sort(&g).unwrap();
            let pos = |id: u32| order.iter().position(|t| t.0 == id).unwrap();
            assert!(e.iter().all(|(a, b)| pos(*a) < pos(*b)));
        }
    }

    #[test]
    fn cycle_detected() {
        let g = raw(3, &[(1, 2), (2, 3), (3, 1)]);
        assert!(matches!(topological_sort(&g), Err(GraphError::Cycle(_))));
        assert!(group_parallel_tasks(&g).is_err());
    }

    #[test]
    fn affected_subgraph_cases() {
        let g = raw(4, &[(1, 2), (2, 3), (1, 4)]);
        assert_eq!(affected_subgraph(&g, &set(&[2])).unwrap(), set(&[2, 3]));
        assert_eq!(affected_subgraph(&g, &set(&[3])).unwrap(), set(&[3]));
        assert_eq!(affected_subgraph(&g, &set(&[1])).unwrap(), set(&[1, 2, 3, 4]));
        assert!(matches!(
            affected_subgraph(&g, &set(&[9])),
            Err(GraphError::UnknownNode(TaskId(9)))
        ));
        let j = build_dag(&plan("1. text2SQL(problem=\"a\")\n2. join()", &[])).unwrap();
        assert_eq!(affected_subgraph(&j, &set(&[2])).unwrap(), set(&[2]));
    }

    #[test]
    fn splice_example_two() {
        let g = build_dag(&plan(
            "1. text2SQL(problem=\"oldest renaissance painting\")\n2. image_analysis(question=\"What is depicted in the image?\", context=$1)\n3. join()",
            &[],
        ))
        .unwrap();
        let replacement = plan(
            "3. image_analysis(question=\"What is specifically depicted in the painting?\", context=$1)\n4. join()",
            &[1],
        );
        let spliced = splice(&g, &set(&[1]), &replacement).unwrap();
        assert_eq!(spliced.nodes.keys().map(|t| t.0).collect::<Vec<_>>(), vec![1, 3, 4]);
        assert_eq!(edges(&spliced), vec![(1, 3), (3, 4)]);
        assert_eq!(spliced.join_id, TaskId(4));
        assert_eq!(spliced.reusable, set(&[1]));
        assert_eq!(spliced.nodes[&TaskId(1)], g.nodes[&TaskId(1)]);
        assert_eq!(spliced.nodes[&TaskId(3)].args["context"], ArgValue::Ref(TaskId(1)));
    }

    #[test]
    fn splice_renumbers_restarted_ids() {
        let g = build_dag(&plan(
            "1. text2SQL(problem=\"a\")\n2. image_analysis(question=\"b\", context=$1)\n3. join()",
            &[],
        ))
        .unwrap();
        // replanner restarted numbering at 1 and references preserved 1 plus its own task 1
        let replacement = plan(
            "1. image_analysis(question=\"again\", context=$1)\n2. data_preparation(question=\"c\", context=$1)\n3. join()",
            &[1],
        );
        let spliced = splice(&g, &set(&[1]), &replacement).unwrap();
        assert_eq!(spliced.nodes[&TaskId(3)].args["context"], ArgValue::Ref(TaskId(1)));
        assert_eq!(spliced.nodes[&TaskId(4)].args["context"], ArgValue::Ref(TaskId(3)));
        assert_eq!(spliced.join_id, TaskId(5));
    }

    #[test]
    fn splice_without_keep_matches_build_dag_up_to_renumbering() {
        let g = build_dag(&plan("1. text2SQL(problem=\"a\")\n2. join()", &[])).unwrap();
        let replacement = plan(
            "1. text2SQL(problem=\"x\")\n2. image_analysis(question=\"y\", context=$1)\n3. join()",
            &[],
        );
        let spliced = splice(&g, &BTreeSet::new(), &replacement).unwrap();
        let direct = build_dag(&replacement).unwrap();
        let shift = |id: TaskId| TaskId(id.0 + 1);
        let shifted: BTreeSet<(TaskId, TaskId)> =
            direct.edges.iter().map(|(a, b)| (shift(*a), shift(*b))).collect();
        assert_eq!(spliced.edges, shifted);
        assert_eq!(spliced.join_id, shift(direct.join_id));
        assert!(spliced.reusable.is_empty());
        for (id, task) in &direct.nodes {
            let other = &spliced.nodes[&shift(*id)];
            assert_eq!(other.tool, task.tool);
            assert_eq!(other.deps.iter().map(|d| d.0 - 1).collect::<Vec<_>>(),
                task.deps.iter().map(|d| d.0).collect::<Vec<_>>());
        }
    }

    #[test]
    fn splice_rejects_dropped_reference() {
        let g = build_dag(&plan(
            "1. text2SQL(problem=\"a\")\n2. image_analysis(question=\"b\", context=$1)\n3. join()",
            &[],
        ))
        .unwrap();
        let replacement = plan("3. data_preparation(question=\"c\", context=$2)\n4. join()", &[1, 2]);
        let err = splice(&g, &set(&[1]), &replacement).unwrap_err();
        assert!(matches!(err, GraphError::Splice(_)));
        // oracle: refs must be within keep ∪ replacement ids
        let allowed: BTreeSet<TaskId> = set(&[1]).union(&replacement.ids().collect()).copied().collect();
        assert!(!replacement.tasks[0].deps.is_subset(&allowed));
    }
}
