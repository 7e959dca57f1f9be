use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{NodeId, NodeKind, TaskGraph, TaskNode};
use crate::bt::GateSlot;
use crate::motion_library::{MotionLibrary, ParamKind, SkillPrimitive};
use crate::predicate::{Predicate, PredicateSymbol};
use crate::refs::SymbolicRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IssueCode {
    MissingRoot,
    RootHasParent,
    DanglingReference,
    CycleDetected,
    MultipleParents,
    OrphanNode,
    EmptyComposite,
    WrongChildCount,
    LeafWithChildren,
    BadRetryBounds,
    UnexpectedMaxAttempts,
    MissingSkill,
    UnexpectedSkill,
    UnknownSkill,
    UnknownArg,
    MissingArg,
    ArgKindMismatch,
    BadCondition,
    BadGate,
    /// Planner output could not be parsed into a graph at all.
    ParseError,
    NoStructuredBlock,
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    pub node_id: Option<NodeId>,
    pub message: String,
}

impl Issue {
    pub fn new(code: IssueCode, node_id: Option<&str>, message: impl Into<String>) -> Self {
        Issue {
            code,
            node_id: node_id.map(str::to_string),
            message: message.into(),
        }
    }
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node_id {
            Some(id) => write!(f, "{} at node `{id}`: {}", self.code, self.message),
            None => write!(f, "{}: {}", self.code, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    pub valid: bool,
}

impl ValidationReport {
    pub fn from_issues(issues: Vec<Issue>) -> Self {
        let valid = issues.is_empty();
        ValidationReport { issues, valid }
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }
}

/// Library-independent checks: tree shape, arity, retry bounds, gate and
/// condition forms.
pub fn validate_structure(graph: &TaskGraph) -> ValidationReport {
    ValidationReport::from_issues(structure_issues(graph))
}

/// Full validation: structure plus skill existence and argument
/// conformance. Total over any parsed graph; problems become issues.
pub fn validate(graph: &TaskGraph, library: &MotionLibrary) -> ValidationReport {
    let mut issues = structure_issues(graph);
    for node in graph.nodes.values() {
        if node.kind != NodeKind::Action {
            continue;
        }
        let Some(name) = &node.skill else { continue };
        match library.get(name) {
            None => issues.push(Issue::new(
                IssueCode::UnknownSkill,
                Some(&node.id),
                format!("UnknownSkill(\"{name}\"): skill `{name}` is not in the motion library"),
            )),
            Some(skill) => arg_issues(node, skill, &mut issues),
        }
    }
    ValidationReport::from_issues(issues)
}

fn structure_issues(graph: &TaskGraph) -> Vec<Issue> {
    let mut issues = Vec::new();

    let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for node in graph.nodes.values() {
        for target in node.edges() {
            if graph.nodes.contains_key(target) {
                parents.entry(target.as_str()).or_default().push(&node.id);
            } else {
                issues.push(Issue::new(
                    IssueCode::DanglingReference,
                    Some(&node.id),
                    format!("references missing node `{target}`"),
                ));
            }
        }
    }

    if !graph.nodes.contains_key(&graph.root) {
        issues.push(Issue::new(
            IssueCode::MissingRoot,
            None,
            format!("root `{}` is not a node of the graph", graph.root),
        ));
    } else if let Some(p) = parents.get(graph.root.as_str()) {
        issues.push(Issue::new(
            IssueCode::RootHasParent,
            Some(&graph.root),
            format!("root is referenced by {}", p.join(", ")),
        ));
    }

    for (id, p) in &parents {
        if p.len() > 1 && *id != graph.root {
            issues.push(Issue::new(
                IssueCode::MultipleParents,
                Some(id),
                format!(
                    "node has {} parents ({}); task graphs must be trees",
                    p.len(),
                    p.join(", ")
                ),
            ));
        }
    }

    for id in find_cycles(graph) {
        issues.push(Issue::new(
            IssueCode::CycleDetected,
            Some(&id),
            "CycleDetected: node is reachable from itself",
        ));
    }

    let reachable = reachable_from_root(graph);
    for id in graph.nodes.keys() {
        if !reachable.contains(id.as_str()) {
            issues.push(Issue::new(
                IssueCode::OrphanNode,
                Some(id),
                "node is not reachable from the root",
            ));
        }
    }

    for node in graph.nodes.values() {
        node_shape_issues(node, &mut issues);
    }
    issues
}

fn node_shape_issues(node: &TaskNode, issues: &mut Vec<Issue>) {
    let id = Some(node.id.as_str());
    match node.kind {
        NodeKind::Action | NodeKind::Condition => {
            if !node.children.is_empty() {
                issues.push(Issue::new(
                    IssueCode::LeafWithChildren,
                    id,
                    format!("{} nodes cannot have children", node.kind),
                ));
            }
        }
        NodeKind::Sequence | NodeKind::Fallback => {
            if node.children.is_empty() {
                issues.push(Issue::new(
                    IssueCode::EmptyComposite,
                    id,
                    format!("{} needs at least one child", node.kind),
                ));
            }
        }
        NodeKind::Retry | NodeKind::MorphologyGate => {
            if node.children.is_empty() {
                issues.push(Issue::new(
                    IssueCode::EmptyComposite,
                    id,
                    format!("{} needs exactly one child", node.kind),
                ));
            } else if node.children.len() != 1 {
                issues.push(Issue::new(
                    IssueCode::WrongChildCount,
                    id,
                    format!("{} needs exactly one child, found {}", node.kind, node.children.len()),
                ));
            }
        }
    }

    match (node.kind, node.max_attempts) {
        (NodeKind::Retry, None) => {
            issues.push(Issue::new(IssueCode::BadRetryBounds, id, "retry requires max_attempts"))
        }
        (NodeKind::Retry, Some(0)) => issues.push(Issue::new(
            IssueCode::BadRetryBounds,
            id,
            "max_attempts must be at least 1",
        )),
        (NodeKind::Retry, Some(_)) | (_, None) => {}
        (_, Some(_)) => issues.push(Issue::new(
            IssueCode::UnexpectedMaxAttempts,
            id,
            "max_attempts is only allowed on retry nodes",
        )),
    }

    match (node.kind, &node.skill) {
        (NodeKind::Action, None) => issues.push(Issue::new(IssueCode::MissingSkill, id, "action node needs a skill")),
        (NodeKind::Action, Some(_)) | (_, None) => {}
        (kind, Some(skill)) => issues.push(Issue::new(
            IssueCode::UnexpectedSkill,
            id,
            format!("{kind} node cannot name a skill (`{skill}`)"),
        )),
    }

    match node.kind {
        NodeKind::Condition => {
            if let Err(msg) = condition_from_args(&node.args) {
                issues.push(Issue::new(IssueCode::BadCondition, id, msg));
            }
        }
        NodeKind::MorphologyGate => {
            if let Err(msg) = gate_slot_from_args(&node.args) {
                issues.push(Issue::new(IssueCode::BadGate, id, msg));
            }
        }
        _ => {}
    }
}

/// Reads the `{predicate, args, negated}` triple a condition node carries.
pub fn condition_from_args(args: &BTreeMap<String, Value>) -> Result<Predicate, String> {
    for key in args.keys() {
        if !matches!(key.as_str(), "predicate" | "args" | "negated") {
            return Err(format!("unexpected condition field `{key}`"));
        }
    }
    let symbol = args
        .get("predicate")
        .and_then(Value::as_str)
        .ok_or("condition needs a `predicate` string")?;
    let predicate: PredicateSymbol = symbol.parse()?;
    let pred_args = match args.get("args") {
        None => Vec::new(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or("condition args must be strings")?,
        Some(_) => return Err("condition args must be a list".into()),
    };
    if pred_args.len() != predicate.arity() {
        return Err(format!(
            "`{predicate}` takes {} argument(s), got {}",
            predicate.arity(),
            pred_args.len()
        ));
    }
    for a in &pred_args {
        if let Some(Err(msg)) = SymbolicRef::parse(a) {
            return Err(msg);
        }
    }
    let negated = match args.get("negated") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err("`negated` must be a boolean".into()),
    };
    Ok(Predicate {
        predicate,
        args: pred_args,
        negated,
    })
}

/// Reads the optional `slot` argument of a morphology gate.
pub fn gate_slot_from_args(args: &BTreeMap<String, Value>) -> Result<GateSlot, String> {
    for key in args.keys() {
        if key != "slot" {
            return Err(format!("unexpected gate field `{key}`"));
        }
    }
    match args.get("slot") {
        None => Ok(GateSlot::Both),
        Some(Value::String(s)) => GateSlot::parse(s).ok_or_else(|| format!("unknown gate slot `{s}`")),
        Some(_) => Err("gate slot must be a string".into()),
    }
}

fn arg_issues(node: &TaskNode, skill: &SkillPrimitive, issues: &mut Vec<Issue>) {
    let id = Some(node.id.as_str());
    for (name, value) in &node.args {
        match skill.param(name) {
            None => issues.push(Issue::new(
                IssueCode::UnknownArg,
                id,
                format!("skill `{}` has no parameter `{name}`", skill.name),
            )),
            Some(spec) => {
                if let Err(msg) = check_kind(spec.kind, value) {
                    issues.push(Issue::new(
                        IssueCode::ArgKindMismatch,
                        id,
                        format!("argument `{name}` ({}): {msg}", spec.kind),
                    ));
                }
            }
        }
    }
    for spec in skill.params.iter().filter(|p| p.required) {
        if !node.args.contains_key(&spec.name) {
            issues.push(Issue::new(
                IssueCode::MissingArg,
                id,
                format!("skill `{}` requires argument `{}`", skill.name, spec.name),
            ));
        }
    }
}

pub(crate) const ARM_VALUES: [&str; 4] = ["left", "right", "both", "any"];

fn check_kind(kind: ParamKind, value: &Value) -> Result<(), String> {
    let entity = |s: &str| match SymbolicRef::parse(s) {
        Some(Err(msg)) => Err(msg),
        _ if s.trim().is_empty() => Err("empty reference".into()),
        _ => Ok(()),
    };
    match (kind, value) {
        (ParamKind::ObjectRef, Value::String(s)) => entity(s),
        (ParamKind::LocationRef, Value::String(s)) => entity(s),
        (ParamKind::LocationRef, Value::Array(xy)) if xy.len() == 2 && xy.iter().all(Value::is_number) => Ok(()),
        (ParamKind::Arm, Value::String(s)) if ARM_VALUES.contains(&s.as_str()) => Ok(()),
        (ParamKind::Number, Value::Number(_)) => Ok(()),
        (ParamKind::Text, Value::String(_)) => Ok(()),
        (_, other) => Err(format!("unexpected value {other}")),
    }
}

/// Nodes at which a back edge closes a cycle.
fn find_cycles(graph: &TaskGraph) -> BTreeSet<NodeId> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Unseen,
        Active,
        Done,
    }
    let mut marks: BTreeMap<&str, Mark> = graph.nodes.keys().map(|k| (k.as_str(), Mark::Unseen)).collect();
    let mut hits = BTreeSet::new();

    for start in graph.nodes.keys() {
        if marks[start.as_str()] != Mark::Unseen {
            continue;
        }
        // Iterative DFS: (node, next edge index).
        let mut stack: Vec<(&str, usize)> = vec![(start.as_str(), 0)];
        marks.insert(start, Mark::Active);
        while let Some((id, idx)) = stack.last_mut() {
            let node = &graph.nodes[*id];
            let next = node.edges().nth(*idx);
            *idx += 1;
            match next {
                None => {
                    marks.insert(id, Mark::Done);
                    stack.pop();
                }
                Some(target) => match marks.get(target.as_str()) {
                    Some(Mark::Unseen) => {
                        marks.insert(target, Mark::Active);
                        stack.push((target.as_str(), 0));
                    }
                    Some(Mark::Active) => {
                        hits.insert(target.clone());
                    }
                    _ => {}
                },
            }
        }
    }
    hits
}

fn reachable_from_root(graph: &TaskGraph) -> BTreeSet<&str> {
    let mut seen = BTreeSet::new();
    if !graph.nodes.contains_key(&graph.root) {
        return seen;
    }
    let mut stack = vec![graph.root.as_str()];
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            continue;
        }
        for t in graph.nodes[id].edges() {
            if graph.nodes.contains_key(t) {
                stack.push(t);
            }
        }
    }
    seen
}
