//! Tick-based behavior-tree interpreter.
//!
//! Composites keep memory: a child that has completed is not ticked again
//! within the same activation, so skills with lasting world effects are
//! dispatched once. Actions never block; the world is polled on each tick
//! until the dispatched skill reports an outcome.

mod recovery;
mod runner;
pub mod scripted;
mod tree;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::modes::ErrorCategory;
use crate::morphology::MorphologyChoice;
use crate::predicate::Predicate;

pub use recovery::{attach_recovery, AttachError, RecoveryPolicy, REPLAN_SKILL};
pub use runner::{finish_result, run_to_completion, run_with_abort, TreeRunner};
pub use tree::{BehaviorTree, BtNode, GateSlot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Failure,
    Aborted,
    TickBudgetExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Dispatched,
    Completed,
    ConditionEval,
    RecoveryEntered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

/// One entry of a run's execution trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionEvent {
    pub tick: u64,
    pub node_id: String,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Outcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub status: RunStatus,
    pub ticks_used: u64,
    pub events: Vec<ExecutionEvent>,
    pub failure_causes: BTreeMap<ErrorCategory, u32>,
}

impl RunResult {
    pub fn dispatch_count(&self) -> usize {
        self.events.iter().filter(|e| e.event == EventKind::Dispatched).count()
    }

    pub fn dispatches_of(&self, node_id: &str) -> usize {
        self.events
            .iter()
            .filter(|e| e.event == EventKind::Dispatched && e.node_id == node_id)
            .count()
    }

    /// The single cause a failed run is attributed to.
    pub fn primary_cause(&self) -> Option<ErrorCategory> {
        self.failure_causes.keys().next().copied()
    }
}

/// Result of a completed skill or condition as seen by the tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafOutcome {
    Success,
    Failure(ErrorCategory),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DispatchTicket(pub u64);

#[derive(Debug, Clone, Copy)]
pub struct DispatchRequest<'a> {
    pub node_id: &'a str,
    pub skill: &'a str,
    pub args: &'a BTreeMap<String, Value>,
    /// Choice made by the nearest enclosing morphology gate, if any.
    pub morphology: Option<&'a MorphologyChoice>,
}

#[derive(Debug, Clone, Copy)]
pub struct GateRequest<'a> {
    pub node_id: &'a str,
    pub slot: GateSlot,
    /// Skill and arguments of the first action under the gate.
    pub skill: Option<&'a str>,
    pub args: Option<&'a BTreeMap<String, Value>>,
}

/// What the tick loop needs from the robot (simulated or scripted).
///
/// `dispatch` must not block: outcomes are observed through `poll` on the
/// same or later ticks.
pub trait WorldInterface {
    fn dispatch(&mut self, tick: u64, request: DispatchRequest<'_>) -> DispatchTicket;

    fn poll(&mut self, tick: u64, ticket: DispatchTicket) -> Option<LeafOutcome>;

    fn evaluate_condition(&mut self, tick: u64, node_id: &str, condition: &Predicate) -> LeafOutcome;

    fn resolve_morphology(&mut self, tick: u64, gate: GateRequest<'_>) -> Result<MorphologyChoice, ErrorCategory>;
}
