use thiserror::Error;

use super::validate::{condition_from_args, gate_slot_from_args, validate_structure};
use super::{NodeKind, TaskGraph, ValidationReport};
use crate::bt::{BehaviorTree, BtNode};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CompileError {
    #[error("task graph is not valid: {} issue(s)", .0.issues.len())]
    InvalidGraph(ValidationReport),
}

/// Suffix of the id given to the `Recovery` decorator built from a node's
/// `recovery` reference.
pub const RECOVERY_SUFFIX: &str = "#recovery";

/// Structure-preserving translation of a task graph into a behavior tree.
///
/// Each task node becomes exactly one BT node with the same id; a node's
/// `recovery` reference additionally wraps it in a `Recovery` decorator.
pub fn compile_to_bt(graph: &TaskGraph) -> Result<BehaviorTree, CompileError> {
    let report = validate_structure(graph);
    if !report.valid {
        return Err(CompileError::InvalidGraph(report));
    }
    Ok(BehaviorTree::new(compile_node(graph, &graph.root)))
}

// Only called on structurally valid graphs, so lookups and arg parsing
// cannot fail.
fn compile_node(graph: &TaskGraph, id: &str) -> BtNode {
    let node = &graph.nodes[id];
    let mut children = node.children.iter().map(|c| compile_node(graph, c));
    let id = node.id.clone();
    let compiled = match node.kind {
        NodeKind::Sequence => BtNode::Sequence {
            id,
            children: children.collect(),
        },
        NodeKind::Fallback => BtNode::Fallback {
            id,
            children: children.collect(),
        },
        NodeKind::Retry => BtNode::Retry {
            id,
            child: Box::new(children.next().expect("retry has one child")),
            max_attempts: node.max_attempts.expect("retry has bounds"),
        },
        NodeKind::MorphologyGate => BtNode::MorphologyGate {
            id,
            child: Box::new(children.next().expect("gate has one child")),
            slot: gate_slot_from_args(&node.args).expect("gate slot validated"),
        },
        NodeKind::Action => BtNode::Action {
            id,
            skill: node.skill.clone().expect("action has skill"),
            args: node.args.clone(),
        },
        NodeKind::Condition => BtNode::Condition {
            id,
            condition: condition_from_args(&node.args).expect("condition validated"),
        },
    };
    match &node.recovery {
        Some(rec) => BtNode::Recovery {
            id: format!("{}{RECOVERY_SUFFIX}", node.id),
            child: Box::new(compiled),
            recovery: Box::new(compile_node(graph, rec)),
        },
        None => compiled,
    }
}
