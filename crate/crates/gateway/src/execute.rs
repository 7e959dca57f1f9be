//! Executes a planned task graph against a fresh simulated world.

use std::collections::BTreeSet;

use locoplan_core::bt::{
    attach_recovery, finish_result, BehaviorTree, EventKind, ExecutionEvent, Outcome, RecoveryPolicy, RunResult,
    RunStatus, TickStatus, TreeRunner,
};
use locoplan_core::morphology::Thresholds;
use locoplan_core::planner::RunState;
use locoplan_core::sim::scene::SceneSnapshot;
use locoplan_core::sim::{FailureInjection, SimWorld, World};
use locoplan_core::taskgraph::{compile_to_bt, NodeKind, TaskGraph};
use locoplan_core::MotionLibrary;

/// Compiles a graph and applies the recovery policy, if any.
pub fn build_tree(
    graph: &TaskGraph,
    recovery: Option<&RecoveryPolicy>,
    library: &MotionLibrary,
) -> Result<BehaviorTree, String> {
    let tree = compile_to_bt(graph).map_err(|e| e.to_string())?;
    match recovery {
        Some(policy) => attach_recovery(&tree, policy, library).map_err(|e| e.to_string()),
        None => Ok(tree),
    }
}

pub struct ExecutionSetup<'a> {
    pub library: &'a MotionLibrary,
    pub scene: &'a SceneSnapshot,
    pub thresholds: &'a Thresholds,
    pub injection: &'a FailureInjection,
    /// Stream index within the injection's random sequence.
    pub run_index: u64,
    pub tick_budget: u64,
}

pub struct Execution {
    pub result: RunResult,
    pub final_scene: SceneSnapshot,
    /// The graph that replaced the original after a replan.
    pub replacement: Option<(TaskGraph, BehaviorTree)>,
}

/// Called once after a failed run that reached a replan leaf. Returns the
/// new graph and its tree, or `None` to let the failure stand.
pub type Replanner<'r> = dyn FnMut(RunState) -> Option<(TaskGraph, BehaviorTree)> + 'r;

/// Ticks `tree` to completion, reporting events as they occur and checking
/// `should_abort` between ticks. A failure that went through a replan leaf
/// is handed to `replanner` once; the new tree then runs on the same world.
pub fn execute(
    setup: &ExecutionSetup<'_>,
    instruction: &str,
    graph: &TaskGraph,
    tree: &BehaviorTree,
    mut on_event: impl FnMut(&ExecutionEvent),
    mut should_abort: impl FnMut() -> bool,
    replanner: Option<&mut Replanner<'_>>,
) -> Execution {
    let world = World::new(setup.scene.clone())
        .with_thresholds(setup.thresholds.clone())
        .for_run(setup.run_index);
    let mut sim = SimWorld::new(world, setup.library, setup.injection);
    let mut replanner = replanner;
    let mut replacement: Option<(TaskGraph, BehaviorTree)> = None;
    let mut events: Vec<ExecutionEvent> = Vec::new();
    let mut runner = TreeRunner::new(tree);
    let mut status = RunStatus::TickBudgetExceeded;
    let mut last_failure = None;
    let mut ticks_used = 0;

    while ticks_used < setup.tick_budget {
        if should_abort() {
            status = RunStatus::Aborted;
            break;
        }
        ticks_used += 1;
        let seen = runner.events().len();
        let tick = runner.tick(&mut sim);
        for e in &runner.events()[seen..] {
            on_event(e);
        }
        match tick {
            TickStatus::Running => continue,
            TickStatus::Success => {
                status = RunStatus::Success;
                break;
            }
            TickStatus::Failure => {
                last_failure = runner.last_failure();
                let escalated = sim.replans.first().cloned();
                let (Some(request), None, Some(replan)) = (escalated, &replacement, replanner.as_mut()) else {
                    status = RunStatus::Failure;
                    break;
                };
                let current = replacement.as_ref().map_or(graph, |(g, _)| g);
                let state = RunState {
                    instruction: instruction.to_string(),
                    failed_skill: current.node(&request.failed_node).and_then(|n| n.skill.clone()),
                    failed_node: request.failed_node.clone(),
                    error_category: request.category,
                    completed: completed_actions(current, runner.events()),
                    scene: sim.world.scene.clone(),
                };
                match replan(state) {
                    Some((g, t)) => {
                        let next = TreeRunner::new(&t).starting_at(runner.current_tick());
                        events.extend(std::mem::replace(&mut runner, next).into_events());
                        replacement = Some((g, t));
                    }
                    None => {
                        status = RunStatus::Failure;
                        break;
                    }
                }
            }
        }
    }
    if status != RunStatus::Failure {
        last_failure = runner.last_failure();
    }
    events.extend(runner.into_events());
    Execution {
        result: finish_result(status, ticks_used, events, last_failure),
        final_scene: sim.world.scene,
        replacement,
    }
}

/// Action nodes of `graph` that completed successfully.
fn completed_actions(graph: &TaskGraph, events: &[ExecutionEvent]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    events
        .iter()
        .filter(|e| e.event == EventKind::Completed && e.outcome == Some(Outcome::Success))
        .filter(|e| graph.node(&e.node_id).is_some_and(|n| n.kind == NodeKind::Action))
        .filter(|e| seen.insert(e.node_id.clone()))
        .map(|e| e.node_id.clone())
        .collect()
}
