use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::predicate::Predicate;

/// Which mode decision a morphology gate defers to execution time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GateSlot {
    Manipulation,
    Locomotion,
    #[default]
    Both,
}

impl GateSlot {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "manipulation" => Some(GateSlot::Manipulation),
            "locomotion" => Some(GateSlot::Locomotion),
            "both" => Some(GateSlot::Both),
            _ => None,
        }
    }
}

/// Executable behavior-tree node. Every node carries the id of the task
/// node it came from so execution events can be traced back to the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BtNode {
    Sequence {
        id: String,
        children: Vec<BtNode>,
    },
    Fallback {
        id: String,
        children: Vec<BtNode>,
    },
    Retry {
        id: String,
        child: Box<BtNode>,
        max_attempts: u32,
    },
    Recovery {
        id: String,
        child: Box<BtNode>,
        recovery: Box<BtNode>,
    },
    MorphologyGate {
        id: String,
        child: Box<BtNode>,
        slot: GateSlot,
    },
    Action {
        id: String,
        skill: String,
        args: BTreeMap<String, Value>,
    },
    Condition {
        id: String,
        condition: Predicate,
    },
}

impl BtNode {
    pub fn action(id: &str, skill: &str) -> BtNode {
        BtNode::Action {
            id: id.into(),
            skill: skill.into(),
            args: BTreeMap::new(),
        }
    }

    pub fn sequence(id: &str, children: Vec<BtNode>) -> BtNode {
        BtNode::Sequence {
            id: id.into(),
            children,
        }
    }

    pub fn fallback(id: &str, children: Vec<BtNode>) -> BtNode {
        BtNode::Fallback {
            id: id.into(),
            children,
        }
    }

    pub fn retry(id: &str, child: BtNode, max_attempts: u32) -> BtNode {
        BtNode::Retry {
            id: id.into(),
            child: Box::new(child),
            max_attempts,
        }
    }

    pub fn recovery(id: &str, child: BtNode, recovery: BtNode) -> BtNode {
        BtNode::Recovery {
            id: id.into(),
            child: Box::new(child),
            recovery: Box::new(recovery),
        }
    }

    pub fn id(&self) -> &str {
        match self {
            BtNode::Sequence { id, .. }
            | BtNode::Fallback { id, .. }
            | BtNode::Retry { id, .. }
            | BtNode::Recovery { id, .. }
            | BtNode::MorphologyGate { id, .. }
            | BtNode::Action { id, .. }
            | BtNode::Condition { id, .. } => id,
        }
    }

    /// Children in tick order; for `Recovery` the recovery branch is last.
    pub fn children(&self) -> Vec<&BtNode> {
        match self {
            BtNode::Sequence { children, .. } | BtNode::Fallback { children, .. } => children.iter().collect(),
            BtNode::Retry { child, .. } | BtNode::MorphologyGate { child, .. } => vec![child],
            BtNode::Recovery { child, recovery, .. } => vec![child, recovery],
            BtNode::Action { .. } | BtNode::Condition { .. } => Vec::new(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, BtNode::Action { .. } | BtNode::Condition { .. })
    }

    pub fn node_count(&self) -> usize {
        1 + self.children().into_iter().map(BtNode::node_count).sum::<usize>()
    }

    pub fn leaf_count(&self) -> usize {
        if self.is_leaf() {
            1
        } else {
            self.children().into_iter().map(BtNode::leaf_count).sum()
        }
    }

    /// First action leaf in tick order, if any.
    pub fn first_action(&self) -> Option<&BtNode> {
        if matches!(self, BtNode::Action { .. }) {
            return Some(self);
        }
        self.children().into_iter().find_map(BtNode::first_action)
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a BtNode)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorTree {
    pub root: BtNode,
}

impl BehaviorTree {
    pub fn new(root: BtNode) -> Self {
        BehaviorTree { root }
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }

    /// Number of nodes that are not `Recovery` decorators.
    pub fn plan_node_count(&self) -> usize {
        let mut n = 0;
        self.root.visit(&mut |node| {
            if !matches!(node, BtNode::Recovery { .. }) {
                n += 1;
            }
        });
        n
    }

    /// Skill names of action leaves on the primary path, i.e. outside any
    /// recovery branch, sorted.
    pub fn primary_skills(&self) -> Vec<String> {
        fn walk(node: &BtNode, out: &mut Vec<String>) {
            match node {
                BtNode::Action { skill, .. } => out.push(skill.clone()),
                BtNode::Recovery { child, .. } => walk(child, out),
                other => other.children().into_iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut out);
        out.sort();
        out
    }

    /// Every action leaf's skill name, sorted.
    pub fn all_skills(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.root.visit(&mut |n| {
            if let BtNode::Action { skill, .. } = n {
                out.push(skill.clone());
            }
        });
        out.sort();
        out
    }
}
