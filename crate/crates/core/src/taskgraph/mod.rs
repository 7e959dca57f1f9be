//! Hierarchical task graphs emitted by the planner: wire schema, parsing
//! from chat-style model output, validation against a motion library, and
//! compilation to an executable behavior tree.

mod compile;
mod parse;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use compile::{compile_to_bt, CompileError};
pub use parse::{parse_task_graph, ParseError};
pub use validate::{
    condition_from_args, gate_slot_from_args, validate, validate_structure, Issue, IssueCode, ValidationReport,
};

pub type NodeId = String;

pub const TASK_GRAPH_FORMAT_VERSION: u64 = 1;

/// Wire schema quoted verbatim in planner prompts.
pub const TASK_GRAPH_SCHEMA: &str = r#"{"format_version":1, "root": "<node id>", "nodes":[{"id":"<node id>", "kind":"action|condition|sequence|fallback|retry|morphology_gate", "skill":"<skill name, action only>", "args":{"<param>":"<value>"}, "children":["<node id>"], "max_attempts":<integer, retry only>, "recovery":"<node id of a recovery subtree, optional>"}], "metadata":{"instruction":"<text>"}}"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Action,
    Condition,
    Sequence,
    Fallback,
    Retry,
    MorphologyGate,
}

impl NodeKind {
    pub fn is_leaf(self) -> bool {
        matches!(self, NodeKind::Action | NodeKind::Condition)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NodeKind::Action => "action",
            NodeKind::Condition => "condition",
            NodeKind::Sequence => "sequence",
            NodeKind::Fallback => "fallback",
            NodeKind::Retry => "retry",
            NodeKind::MorphologyGate => "morphology_gate",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<NodeId>,
}

impl TaskNode {
    pub fn new(id: &str, kind: NodeKind) -> Self {
        TaskNode {
            id: id.into(),
            kind,
            skill: None,
            args: BTreeMap::new(),
            children: Vec::new(),
            max_attempts: None,
            recovery: None,
        }
    }

    pub fn action(id: &str, skill: &str, args: &[(&str, Value)]) -> Self {
        TaskNode {
            skill: Some(skill.into()),
            args: args.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            ..TaskNode::new(id, NodeKind::Action)
        }
    }

    pub fn composite(id: &str, kind: NodeKind, children: &[&str]) -> Self {
        TaskNode {
            children: children.iter().map(|c| c.to_string()).collect(),
            ..TaskNode::new(id, kind)
        }
    }

    /// Outgoing tree edges: children followed by the recovery reference.
    pub fn edges(&self) -> impl Iterator<Item = &NodeId> {
        self.children.iter().chain(self.recovery.iter())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner_attempts: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, TaskNode>,
    pub metadata: GraphMetadata,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct WireGraph {
    pub format_version: u64,
    pub root: NodeId,
    pub nodes: Vec<TaskNode>,
    #[serde(default)]
    pub metadata: GraphMetadata,
}

impl TaskGraph {
    pub fn new(root: &str, nodes: Vec<TaskNode>) -> Self {
        TaskGraph {
            root: root.into(),
            nodes: nodes.into_iter().map(|n| (n.id.clone(), n)).collect(),
            metadata: GraphMetadata::default(),
        }
    }

    pub fn with_instruction(mut self, instruction: &str) -> Self {
        self.metadata.instruction = Some(instruction.into());
        self
    }

    pub fn node(&self, id: &str) -> Option<&TaskNode> {
        self.nodes.get(id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Skill names referenced by action nodes, sorted.
    pub fn action_skills(&self) -> Vec<String> {
        let mut skills: Vec<_> = self
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Action)
            .filter_map(|n| n.skill.clone())
            .collect();
        skills.sort();
        skills
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.values().filter(|n| n.kind.is_leaf()).count()
    }

    fn to_wire(&self) -> WireGraph {
        WireGraph {
            format_version: TASK_GRAPH_FORMAT_VERSION,
            root: self.root.clone(),
            nodes: self.nodes.values().cloned().collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Serializes to the wire schema (nodes in id order).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_wire()).expect("task graph serializes")
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self.to_wire()).expect("task graph serializes")
    }
}

impl Serialize for TaskGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_wire().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TaskGraph {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let wire = WireGraph::deserialize(deserializer)?;
        if wire.format_version != TASK_GRAPH_FORMAT_VERSION {
            return Err(serde::de::Error::custom(format!(
                "unsupported task graph format_version {}",
                wire.format_version
            )));
        }
        TaskGraph::from_wire(wire).map_err(serde::de::Error::custom)
    }
}

impl TaskGraph {
    pub(crate) fn from_wire(wire: WireGraph) -> Result<Self, String> {
        let mut nodes = BTreeMap::new();
        for node in wire.nodes {
            let id = node.id.clone();
            if nodes.insert(id.clone(), node).is_some() {
                return Err(format!("duplicate node id `{id}`"));
            }
        }
        Ok(TaskGraph {
            root: wire.root,
            nodes,
            metadata: wire.metadata,
        })
    }
}
