use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use locoplan_core::bt::{ExecutionEvent, RecoveryPolicy, RunResult, RunStatus};
use locoplan_core::planner::PlannerOption;
use locoplan_core::taskgraph::{parse_task_graph, Issue, TaskGraph};
use locoplan_core::ErrorCategory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Planned,
    AwaitingApproval,
    Executing,
    Succeeded,
    Failed,
    Aborted,
}

impl RunState {
    pub const ALL: [RunState; 6] = [
        RunState::Planned,
        RunState::AwaitingApproval,
        RunState::Executing,
        RunState::Succeeded,
        RunState::Failed,
        RunState::Aborted,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Succeeded | RunState::Failed | RunState::Aborted)
    }

    /// The declared lifecycle edges. `planned → failed` is taken when
    /// planning produced no valid graph.
    pub fn can_transition_to(self, next: RunState) -> bool {
        use RunState::*;
        matches!(
            (self, next),
            (Planned, AwaitingApproval)
                | (Planned, Failed)
                | (AwaitingApproval, Executing)
                | (Executing, Succeeded | Failed | Aborted)
                | (Planned | AwaitingApproval, Aborted)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Planned => "planned",
            RunState::AwaitingApproval => "awaiting_approval",
            RunState::Executing => "executing",
            RunState::Succeeded => "succeeded",
            RunState::Failed => "failed",
            RunState::Aborted => "aborted",
        }
    }
}

impl fmt::Display for RunState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Label runs are grouped under in metrics reports.
    pub task: String,
    pub planner_options: BTreeSet<PlannerOption>,
    pub recovery: Option<RecoveryPolicy>,
    pub tick_budget: u64,
    /// Pause between ticks, for watching a run live. Zero runs flat out.
    pub tick_interval_ms: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            task: "adhoc".into(),
            planner_options: PlannerOption::ALL.into_iter().collect(),
            recovery: Some(RecoveryPolicy::Retry(1)),
            tick_budget: 10_000,
            tick_interval_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningSummary {
    pub rounds: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<Issue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub instruction: String,
    #[serde(with = "graph_serde")]
    pub graph: Option<TaskGraph>,
    pub options: RunOptions,
    pub seed: u64,
    pub state: RunState,
    pub planning: PlanningSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Graph produced by the single allowed replan, if it happened.
    #[serde(default, with = "graph_serde", skip_serializing_if = "Option::is_none")]
    pub replanned_graph: Option<TaskGraph>,
    pub events: Vec<ExecutionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
}

impl RunRecord {
    /// The category a failed run is counted under. Runs that never
    /// executed failed in planning.
    pub fn failure_cause(&self) -> Option<ErrorCategory> {
        match (self.state, &self.result) {
            (RunState::Failed, Some(r)) => Some(r.primary_cause().unwrap_or(ErrorCategory::ExecutionDynamics)),
            (RunState::Failed, None) => Some(ErrorCategory::Planning),
            _ => None,
        }
    }

    pub fn dispatch_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| e.event == locoplan_core::bt::EventKind::Dispatched)
            .count()
    }
}

/// Terminal state reached by a finished execution.
pub fn state_for(status: RunStatus) -> RunState {
    match status {
        RunStatus::Success => RunState::Succeeded,
        RunStatus::Aborted => RunState::Aborted,
        RunStatus::Failure | RunStatus::TickBudgetExceeded => RunState::Failed,
    }
}

pub(crate) mod graph_serde {
    use super::*;

    pub fn serialize<S: Serializer>(graph: &Option<TaskGraph>, s: S) -> Result<S::Ok, S::Error> {
        graph.as_ref().map(TaskGraph::to_value).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<TaskGraph>, D::Error> {
        let value: Option<serde_json::Value> = Option::deserialize(d)?;
        value
            .map(|v| parse_task_graph(&v.to_string()).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_declared_edges_are_allowed() {
        use RunState::*;
        let allowed: BTreeSet<(RunState, RunState)> = [
            (Planned, AwaitingApproval),
            (Planned, Failed),
            (Planned, Aborted),
            (AwaitingApproval, Executing),
            (AwaitingApproval, Aborted),
            (Executing, Succeeded),
            (Executing, Failed),
            (Executing, Aborted),
        ]
        .into();
        for a in RunState::ALL {
            for b in RunState::ALL {
                assert_eq!(a.can_transition_to(b), allowed.contains(&(a, b)), "{a} -> {b}");
            }
            if a.is_terminal() {
                assert!(RunState::ALL.iter().all(|b| !a.can_transition_to(*b)));
            }
        }
    }
}
