use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use locoplan_core::ErrorCategory;

use crate::record::{RunRecord, RunState};

/// Success rate a task must reach to count as solved.
pub const SUCCESS_BAR: f64 = 0.60;

/// The part of a finished run that metrics count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub task: String,
    pub state: RunState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<ErrorCategory>,
}

impl From<&RunRecord> for TrialSummary {
    fn from(r: &RunRecord) -> Self {
        TrialSummary {
            task: r.options.task.clone(),
            state: r.state,
            cause: r.failure_cause(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub trials: u64,
    pub successes: u64,
    pub success_rate: f64,
    pub failure_breakdown: BTreeMap<ErrorCategory, u64>,
    pub meets_bar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bar: f64,
    pub tasks: BTreeMap<String, TaskMetrics>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no finished runs match{}", .0.as_ref().map(|t| format!(" task `{t}`")).unwrap_or_default())]
    NoMatchingRuns(Option<String>),
}

/// Counts finished runs per task. Aborted and unfinished runs are left
/// out: they neither succeeded nor failed.
pub fn report_metrics<'a>(
    runs: impl IntoIterator<Item = &'a TrialSummary>,
    task: Option<&str>,
) -> Result<MetricsReport, MetricsError> {
    let mut tasks: BTreeMap<String, TaskMetrics> = BTreeMap::new();
    for run in runs {
        if task.is_some_and(|t| t != run.task) {
            continue;
        }
        if !matches!(run.state, RunState::Succeeded | RunState::Failed) {
            continue;
        }
        let m = tasks.entry(run.task.clone()).or_insert_with(|| TaskMetrics {
            trials: 0,
            successes: 0,
            success_rate: 0.0,
            failure_breakdown: BTreeMap::new(),
            meets_bar: false,
        });
        m.trials += 1;
        if run.state == RunState::Succeeded {
            m.successes += 1;
        } else {
            *m.failure_breakdown
                .entry(run.cause.unwrap_or(ErrorCategory::ExecutionDynamics))
                .or_default() += 1;
        }
    }
    if tasks.is_empty() {
        return Err(MetricsError::NoMatchingRuns(task.map(str::to_string)));
    }
    for m in tasks.values_mut() {
        m.success_rate = m.successes as f64 / m.trials as f64;
        m.meets_bar = m.success_rate >= SUCCESS_BAR;
    }
    Ok(MetricsReport {
        bar: SUCCESS_BAR,
        tasks,
    })
}

impl MetricsReport {
    /// Fixed-width text table, the same figures as the JSON form.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>8} {:>9} {:>8}  {:<9} {}\n",
            "task", "trials", "successes", "rate", "bar", "failures"
        );
        for (name, m) in &self.tasks {
            let breakdown = m
                .failure_breakdown
                .iter()
                .map(|(c, n)| format!("{c}={n}"))
                .collect::<Vec<_>>()
                .join(" ");
            let _ = writeln!(
                out,
                "{:<24} {:>8} {:>9} {:>8.4}  {:<9} {}",
                name,
                m.trials,
                m.successes,
                m.success_rate,
                if m.meets_bar { "met" } else { "not met" },
                if breakdown.is_empty() {
                    "-".to_string()
                } else {
                    breakdown
                }
            );
        }
        out
    }
}
