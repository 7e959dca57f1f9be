use std::collections::BTreeMap;

use serde_json::Value;

use super::{
    BehaviorTree, BtNode, DispatchRequest, DispatchTicket, EventKind, ExecutionEvent, GateRequest, GateSlot,
    LeafOutcome, Outcome, RunResult, RunStatus, TickStatus, WorldInterface,
};
use crate::modes::ErrorCategory;
use crate::morphology::MorphologyChoice;
use crate::predicate::Predicate;

#[derive(Debug, Clone)]
enum FlatKind {
    Sequence,
    Fallback,
    Retry {
        max_attempts: u32,
    },
    Recovery,
    Gate {
        slot: GateSlot,
        hint: Option<(String, BTreeMap<String, Value>)>,
    },
    Action {
        skill: String,
        args: BTreeMap<String, Value>,
    },
    Condition(Predicate),
}

#[derive(Debug, Clone)]
struct FlatNode {
    id: String,
    kind: FlatKind,
    children: Vec<usize>,
    /// One past the last arena index of this node's subtree.
    end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
enum RecoveryPhase {
    #[default]
    Primary,
    Recovering,
    Reattempt,
}

#[derive(Debug, Clone, Default)]
struct NodeState {
    done: Option<TickStatus>,
    cursor: usize,
    failed_attempts: u32,
    phase: RecoveryPhase,
    ticket: Option<DispatchTicket>,
    choice: Option<MorphologyChoice>,
}

/// Stateful interpreter for one activation of a behavior tree.
///
/// The tree is flattened into a pre-order arena so that resetting a
/// subtree (for retries and recovery re-attempts) is a contiguous range
/// reset.
#[derive(Debug, Clone)]
pub struct TreeRunner {
    nodes: Vec<FlatNode>,
    states: Vec<NodeState>,
    events: Vec<ExecutionEvent>,
    last_failure: Option<ErrorCategory>,
    tick: u64,
}

impl TreeRunner {
    pub fn new(tree: &BehaviorTree) -> Self {
        let mut nodes = Vec::with_capacity(tree.node_count());
        flatten(&tree.root, &mut nodes);
        let states = vec![NodeState::default(); nodes.len()];
        TreeRunner {
            nodes,
            states,
            events: Vec::new(),
            last_failure: None,
            tick: 0,
        }
    }

    /// Starts tick numbering at `tick`, for runs that continue on an
    /// existing world after a previous tree finished.
    pub fn starting_at(mut self, tick: u64) -> Self {
        self.tick = tick;
        self
    }

    pub fn events(&self) -> &[ExecutionEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<ExecutionEvent> {
        self.events
    }

    /// Index of the next tick to be executed.
    pub fn current_tick(&self) -> u64 {
        self.tick
    }

    pub fn last_failure(&self) -> Option<ErrorCategory> {
        self.last_failure
    }

    /// Ticks the root once. A tick is atomic; completed roots keep
    /// returning their final status without touching the world.
    pub fn tick(&mut self, world: &mut dyn WorldInterface) -> TickStatus {
        if let Some(done) = self.states[0].done {
            return done;
        }
        let status = self.tick_node(0, world, None);
        self.tick += 1;
        status
    }

    fn record(&mut self, node: usize, event: EventKind, outcome: Option<LeafOutcome>) {
        let (outcome, error_category) = match outcome {
            None => (None, None),
            Some(LeafOutcome::Success) => (Some(Outcome::Success), None),
            Some(LeafOutcome::Failure(cat)) => {
                self.last_failure = Some(cat);
                (Some(Outcome::Failure), Some(cat))
            }
        };
        self.events.push(ExecutionEvent {
            tick: self.tick,
            node_id: self.nodes[node].id.clone(),
            event,
            outcome,
            error_category,
        });
    }

    fn reset_subtree(&mut self, idx: usize) {
        let end = self.nodes[idx].end;
        for s in &mut self.states[idx..end] {
            *s = NodeState::default();
        }
    }

    fn finish(&mut self, idx: usize, status: TickStatus) -> TickStatus {
        if status != TickStatus::Running {
            self.states[idx].done = Some(status);
        }
        status
    }

    fn tick_node(
        &mut self,
        idx: usize,
        world: &mut dyn WorldInterface,
        morphology: Option<&MorphologyChoice>,
    ) -> TickStatus {
        if let Some(done) = self.states[idx].done {
            return done;
        }
        let kind = self.nodes[idx].kind.clone();
        let status = match kind {
            FlatKind::Sequence => self.tick_composite(idx, world, morphology, TickStatus::Success),
            FlatKind::Fallback => self.tick_composite(idx, world, morphology, TickStatus::Failure),
            FlatKind::Retry { max_attempts } => {
                let child = self.nodes[idx].children[0];
                match self.tick_node(child, world, morphology) {
                    TickStatus::Failure => {
                        self.states[idx].failed_attempts += 1;
                        if self.states[idx].failed_attempts < max_attempts {
                            // Re-attempt on the next tick.
                            self.reset_subtree(child);
                            TickStatus::Running
                        } else {
                            TickStatus::Failure
                        }
                    }
                    other => other,
                }
            }
            FlatKind::Recovery => self.tick_recovery(idx, world, morphology),
            FlatKind::Gate { slot, hint } => {
                if self.states[idx].choice.is_none() {
                    let request = GateRequest {
                        node_id: &self.nodes[idx].id,
                        slot,
                        skill: hint.as_ref().map(|(s, _)| s.as_str()),
                        args: hint.as_ref().map(|(_, a)| a),
                    };
                    match world.resolve_morphology(self.tick, request) {
                        Ok(choice) => {
                            self.record(idx, EventKind::ConditionEval, Some(LeafOutcome::Success));
                            self.states[idx].choice = Some(choice);
                        }
                        Err(cat) => {
                            self.record(idx, EventKind::ConditionEval, Some(LeafOutcome::Failure(cat)));
                            return self.finish(idx, TickStatus::Failure);
                        }
                    }
                }
                let choice = self.states[idx].choice.clone();
                let child = self.nodes[idx].children[0];
                self.tick_node(child, world, choice.as_ref())
            }
            FlatKind::Action { skill, args } => {
                let ticket = match self.states[idx].ticket {
                    Some(t) => t,
                    None => {
                        let request = DispatchRequest {
                            node_id: &self.nodes[idx].id,
                            skill: &skill,
                            args: &args,
                            morphology,
                        };
                        let t = world.dispatch(self.tick, request);
                        self.states[idx].ticket = Some(t);
                        self.record(idx, EventKind::Dispatched, None);
                        t
                    }
                };
                match world.poll(self.tick, ticket) {
                    None => TickStatus::Running,
                    Some(outcome) => {
                        self.record(idx, EventKind::Completed, Some(outcome));
                        leaf_status(outcome)
                    }
                }
            }
            FlatKind::Condition(predicate) => {
                let outcome = world.evaluate_condition(self.tick, &self.nodes[idx].id, &predicate);
                self.record(idx, EventKind::ConditionEval, Some(outcome));
                leaf_status(outcome)
            }
        };
        self.finish(idx, status)
    }

    /// Sequence when `proceed_on` is Success, Fallback when it is Failure.
    fn tick_composite(
        &mut self,
        idx: usize,
        world: &mut dyn WorldInterface,
        morphology: Option<&MorphologyChoice>,
        proceed_on: TickStatus,
    ) -> TickStatus {
        let n = self.nodes[idx].children.len();
        while self.states[idx].cursor < n {
            let child = self.nodes[idx].children[self.states[idx].cursor];
            let status = self.tick_node(child, world, morphology);
            if status == proceed_on {
                self.states[idx].cursor += 1;
            } else {
                return status;
            }
        }
        proceed_on
    }

    fn tick_recovery(
        &mut self,
        idx: usize,
        world: &mut dyn WorldInterface,
        morphology: Option<&MorphologyChoice>,
    ) -> TickStatus {
        let child = self.nodes[idx].children[0];
        let recovery = self.nodes[idx].children[1];
        loop {
            match self.states[idx].phase {
                RecoveryPhase::Primary => match self.tick_node(child, world, morphology) {
                    TickStatus::Failure => {
                        self.record(idx, EventKind::RecoveryEntered, None);
                        self.states[idx].phase = RecoveryPhase::Recovering;
                    }
                    other => return other,
                },
                RecoveryPhase::Recovering => match self.tick_node(recovery, world, morphology) {
                    TickStatus::Success => {
                        self.reset_subtree(child);
                        self.states[idx].phase = RecoveryPhase::Reattempt;
                    }
                    other => return other,
                },
                RecoveryPhase::Reattempt => return self.tick_node(child, world, morphology),
            }
        }
    }
}

fn leaf_status(outcome: LeafOutcome) -> TickStatus {
    match outcome {
        LeafOutcome::Success => TickStatus::Success,
        LeafOutcome::Failure(_) => TickStatus::Failure,
    }
}

fn flatten(node: &BtNode, out: &mut Vec<FlatNode>) -> usize {
    let idx = out.len();
    let kind = match node {
        BtNode::Sequence { .. } => FlatKind::Sequence,
        BtNode::Fallback { .. } => FlatKind::Fallback,
        BtNode::Retry { max_attempts, .. } => FlatKind::Retry {
            max_attempts: *max_attempts,
        },
        BtNode::Recovery { .. } => FlatKind::Recovery,
        BtNode::MorphologyGate { slot, child, .. } => FlatKind::Gate {
            slot: *slot,
            hint: child.first_action().and_then(|a| match a {
                BtNode::Action { skill, args, .. } => Some((skill.clone(), args.clone())),
                _ => None,
            }),
        },
        BtNode::Action { skill, args, .. } => FlatKind::Action {
            skill: skill.clone(),
            args: args.clone(),
        },
        BtNode::Condition { condition, .. } => FlatKind::Condition(condition.clone()),
    };
    out.push(FlatNode {
        id: node.id().to_string(),
        kind,
        children: Vec::new(),
        end: idx + 1,
    });
    let children: Vec<usize> = node.children().into_iter().map(|c| flatten(c, out)).collect();
    out[idx].children = children;
    out[idx].end = out.len();
    idx
}

/// Ticks until the root completes or `tick_budget` ticks have been spent.
pub fn run_to_completion(tree: &BehaviorTree, world: &mut dyn WorldInterface, tick_budget: u64) -> RunResult {
    run_with_abort(tree, world, tick_budget, || false)
}

/// Like [`run_to_completion`], checking `should_abort` before every tick.
pub fn run_with_abort(
    tree: &BehaviorTree,
    world: &mut dyn WorldInterface,
    tick_budget: u64,
    mut should_abort: impl FnMut() -> bool,
) -> RunResult {
    let mut runner = TreeRunner::new(tree);
    let mut status = RunStatus::TickBudgetExceeded;
    let mut ticks_used = 0;
    while ticks_used < tick_budget {
        if should_abort() {
            status = RunStatus::Aborted;
            break;
        }
        ticks_used += 1;
        match runner.tick(world) {
            TickStatus::Running => continue,
            TickStatus::Success => {
                status = RunStatus::Success;
                break;
            }
            TickStatus::Failure => {
                status = RunStatus::Failure;
                break;
            }
        }
    }
    let last_failure = runner.last_failure();
    finish_result(status, ticks_used, runner.into_events(), last_failure)
}

/// Assembles a run result; a failed run is attributed to `last_failure`.
pub fn finish_result(
    status: RunStatus,
    ticks_used: u64,
    events: Vec<ExecutionEvent>,
    last_failure: Option<ErrorCategory>,
) -> RunResult {
    let mut failure_causes = BTreeMap::new();
    if status == RunStatus::Failure {
        failure_causes.insert(last_failure.unwrap_or(ErrorCategory::Planning), 1);
    }
    RunResult {
        status,
        ticks_used,
        events,
        failure_causes,
    }
}
