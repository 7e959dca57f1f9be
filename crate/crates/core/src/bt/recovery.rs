use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{BehaviorTree, BtNode};
use crate::motion_library::MotionLibrary;

/// Reserved skill name of the escalation leaf inserted by
/// [`RecoveryPolicy::ReplanEscalation`]. Worlds answer it by failing with a
/// planning cause and recording the request; the orchestrator then replans
/// outside the tick loop.
pub const REPLAN_SKILL: &str = "replan";

/// Failure detection and recovery policy applied to every action leaf.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", content = "value", rename_all = "snake_case")]
pub enum RecoveryPolicy {
    /// Up to `n` extra attempts, i.e. `n + 1` total.
    Retry(u32),
    /// Run the named skill, then re-attempt the failed action once.
    RecoverySkill(String),
    ReplanEscalation,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AttachError {
    #[error("recovery skill `{0}` is not in the motion library")]
    UnknownRecoverySkill(String),
}

/// Wraps every action leaf according to `policy`, returning a new tree.
///
/// Leaves already wrapped by the same policy are left alone, so attaching
/// twice is the same as attaching once.
pub fn attach_recovery(
    tree: &BehaviorTree,
    policy: &RecoveryPolicy,
    library: &MotionLibrary,
) -> Result<BehaviorTree, AttachError> {
    if let RecoveryPolicy::RecoverySkill(name) = policy {
        if !library.contains(name) {
            return Err(AttachError::UnknownRecoverySkill(name.clone()));
        }
    }
    Ok(BehaviorTree::new(wrap(&tree.root, policy)))
}

fn wrapper_id(leaf_id: &str, policy: &RecoveryPolicy) -> String {
    match policy {
        RecoveryPolicy::Retry(_) => format!("{leaf_id}#retry"),
        RecoveryPolicy::RecoverySkill(_) | RecoveryPolicy::ReplanEscalation => {
            format!("{leaf_id}#fr")
        }
    }
}

fn is_policy_wrapper(node: &BtNode, policy: &RecoveryPolicy) -> bool {
    match (node, policy) {
        (
            BtNode::Retry {
                id,
                child,
                max_attempts,
            },
            RecoveryPolicy::Retry(n),
        ) => {
            matches!(**child, BtNode::Action { .. }) && *id == wrapper_id(child.id(), policy) && *max_attempts == n + 1
        }
        (BtNode::Recovery { id, child, recovery }, _) => {
            matches!(**child, BtNode::Action { .. })
                && *id == wrapper_id(child.id(), policy)
                && **recovery == recovery_leaf(child.id(), policy)
        }
        _ => false,
    }
}

fn recovery_leaf(leaf_id: &str, policy: &RecoveryPolicy) -> BtNode {
    match policy {
        RecoveryPolicy::RecoverySkill(skill) => BtNode::Action {
            id: format!("{leaf_id}#fr.{skill}"),
            skill: skill.clone(),
            args: BTreeMap::new(),
        },
        RecoveryPolicy::ReplanEscalation => BtNode::Action {
            id: format!("{leaf_id}#fr.{REPLAN_SKILL}"),
            skill: REPLAN_SKILL.into(),
            args: BTreeMap::from([("failed_node".to_string(), Value::String(leaf_id.into()))]),
        },
        RecoveryPolicy::Retry(_) => unreachable!("retry policy has no recovery leaf"),
    }
}

fn wrap(node: &BtNode, policy: &RecoveryPolicy) -> BtNode {
    if is_policy_wrapper(node, policy) {
        return node.clone();
    }
    match node {
        BtNode::Action { id, .. } => match policy {
            RecoveryPolicy::Retry(n) => BtNode::Retry {
                id: wrapper_id(id, policy),
                child: Box::new(node.clone()),
                max_attempts: n + 1,
            },
            _ => BtNode::Recovery {
                id: wrapper_id(id, policy),
                child: Box::new(node.clone()),
                recovery: Box::new(recovery_leaf(id, policy)),
            },
        },
        BtNode::Condition { .. } => node.clone(),
        BtNode::Sequence { id, children } => BtNode::Sequence {
            id: id.clone(),
            children: children.iter().map(|c| wrap(c, policy)).collect(),
        },
        BtNode::Fallback { id, children } => BtNode::Fallback {
            id: id.clone(),
            children: children.iter().map(|c| wrap(c, policy)).collect(),
        },
        BtNode::Retry {
            id,
            child,
            max_attempts,
        } => BtNode::Retry {
            id: id.clone(),
            child: Box::new(wrap(child, policy)),
            max_attempts: *max_attempts,
        },
        BtNode::Recovery { id, child, recovery } => BtNode::Recovery {
            id: id.clone(),
            child: Box::new(wrap(child, policy)),
            recovery: Box::new(wrap(recovery, policy)),
        },
        BtNode::MorphologyGate { id, child, slot } => BtNode::MorphologyGate {
            id: id.clone(),
            child: Box::new(wrap(child, policy)),
            slot: *slot,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_actions() -> BehaviorTree {
        BehaviorTree::new(BtNode::sequence(
            "root",
            (0..5)
                .map(|i| BtNode::action(&format!("a{i}"), "navigate_to"))
                .collect(),
        ))
    }

    #[test]
    fn retry_one_wraps_every_leaf_with_two_attempts() {
        let lib = MotionLibrary::default_library();
        let out = attach_recovery(&five_actions(), &RecoveryPolicy::Retry(1), &lib).unwrap();
        let mut bounds = Vec::new();
        out.root.visit(&mut |n| {
            if let BtNode::Retry {
                max_attempts, child, ..
            } = n
            {
                assert!(matches!(**child, BtNode::Action { .. }));
                bounds.push(*max_attempts);
            }
        });
        assert_eq!(bounds, [2; 5]);
    }

    #[test]
    fn unknown_recovery_skill() {
        let mut lib = MotionLibrary::new();
        lib.register_skill(MotionLibrary::default_library().get("navigate_to").unwrap().clone())
            .unwrap();
        let err = attach_recovery(&five_actions(), &RecoveryPolicy::RecoverySkill("release".into()), &lib).unwrap_err();
        assert_eq!(err, AttachError::UnknownRecoverySkill("release".into()));
    }

    #[test]
    fn attaching_twice_equals_once() {
        let lib = MotionLibrary::default_library();
        for policy in [
            RecoveryPolicy::Retry(1),
            RecoveryPolicy::RecoverySkill("release".into()),
            RecoveryPolicy::ReplanEscalation,
        ] {
            let once = attach_recovery(&five_actions(), &policy, &lib).unwrap();
            let twice = attach_recovery(&once, &policy, &lib).unwrap();
            assert_eq!(once, twice, "{policy:?}");
            assert_eq!(once.primary_skills(), five_actions().primary_skills());
        }
    }

    #[test]
    fn original_tree_is_untouched() {
        let lib = MotionLibrary::default_library();
        let tree = five_actions();
        let before = tree.clone();
        let _ = attach_recovery(&tree, &RecoveryPolicy::Retry(3), &lib).unwrap();
        assert_eq!(tree, before);
    }
}
