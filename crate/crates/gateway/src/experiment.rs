//! Batch Monte Carlo trials over fixture tasks.
//!
//! Each task is planned once from its transcript. Trial `i` then runs the
//! planned graph on a fresh world using random stream `i`, so a batch is
//! fully determined by its seed.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use locoplan_core::bt::{BehaviorTree, RecoveryPolicy, RunStatus};
use locoplan_core::client::{Transcript, TranscriptClient};
use locoplan_core::morphology::Thresholds;
use locoplan_core::planner::{plan, PlanningContext};
use locoplan_core::sim::scene::{load_scene_file, SceneSnapshot};
use locoplan_core::sim::FailureInjection;
use locoplan_core::taskgraph::TaskGraph;
use locoplan_core::{ErrorCategory, MotionLibrary};

use crate::execute::{build_tree, execute, ExecutionSetup};
use crate::metrics::TrialSummary;
use crate::record::{state_for, RunState};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("task `{task}`: {reason}")]
    Task { task: String, reason: String },
    #[error("no task named `{0}` in the manifest")]
    UnknownTask(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskEntry {
    pub name: String,
    pub instruction: String,
    /// Relative to the manifest's directory.
    pub scene: PathBuf,
    pub transcript: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tasks: Vec<TaskEntry>,
}

/// A task with its graph already planned.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub name: String,
    pub instruction: String,
    pub scene: SceneSnapshot,
    pub graph: TaskGraph,
    pub planner_rounds: u32,
}

fn load_err(path: &Path, reason: impl ToString) -> ExperimentError {
    ExperimentError::Load {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, ExperimentError> {
    let text = fs::read_to_string(path).map_err(|e| load_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| load_err(path, e))
}

/// Loads and plans every task in the manifest (or just `only`).
pub fn prepare_tasks(
    manifest_path: &Path,
    library: &MotionLibrary,
    only: Option<&str>,
) -> Result<Vec<PreparedTask>, ExperimentError> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let entries: Vec<&TaskEntry> = manifest
        .tasks
        .iter()
        .filter(|t| only.is_none_or(|n| n == t.name))
        .collect();
    if let (Some(name), true) = (only, entries.is_empty()) {
        return Err(ExperimentError::UnknownTask(name.to_string()));
    }
    entries
        .into_iter()
        .map(|entry| {
            let scene_path = base.join(&entry.scene);
            let scene = load_scene_file(&scene_path).map_err(|e| load_err(&scene_path, e))?;
            let transcript_path = base.join(&entry.transcript);
            let transcript = Transcript::load(&transcript_path).map_err(|e| load_err(&transcript_path, e))?;
            let client = TranscriptClient::new(transcript);
            let ctx = PlanningContext::new(library, &scene);
            let (graph, planner_rounds) =
                plan(&entry.instruction, &ctx, &client).map_err(|e| ExperimentError::Task {
                    task: entry.name.clone(),
                    reason: e.to_string(),
                })?;
            Ok(PreparedTask {
                name: entry.name.clone(),
                instruction: entry.instruction.clone(),
                scene,
                graph,
                planner_rounds,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrialSettings {
    pub trials: u64,
    /// Failure settings; `rng_seed` is the batch seed.
    pub injection: FailureInjection,
    pub recovery: Option<RecoveryPolicy>,
    pub thresholds: Thresholds,
    pub tick_budget: u64,
}

impl TrialSettings {
    pub fn new(trials: u64, seed: u64, fr: bool) -> Self {
        TrialSettings {
            trials,
            injection: FailureInjection::seeded(seed),
            recovery: fr.then_some(RecoveryPolicy::Retry(1)),
            thresholds: Thresholds::default(),
            tick_budget: 10_000,
        }
    }
}

/// One line of a batch file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLine {
    pub task: String,
    pub trial: u64,
    pub seed: u64,
    pub status: RunStatus,
    pub ticks_used: u64,
    pub dispatches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<ErrorCategory>,
}

impl TrialLine {
    pub fn summary(&self) -> TrialSummary {
        let state = state_for(self.status);
        TrialSummary {
            task: self.task.clone(),
            state,
            cause: if state == RunState::Failed {
                Some(self.cause.unwrap_or(ErrorCategory::ExecutionDynamics))
            } else {
                None
            },
        }
    }
}

/// Runs every trial of one task, handing each result to `sink`.
pub fn run_trials(
    task: &PreparedTask,
    settings: &TrialSettings,
    library: &MotionLibrary,
    mut sink: impl FnMut(TrialLine),
) -> Result<(), ExperimentError> {
    let tree: BehaviorTree =
        build_tree(&task.graph, settings.recovery.as_ref(), library).map_err(|reason| ExperimentError::Task {
            task: task.name.clone(),
            reason,
        })?;
    for trial in 0..settings.trials {
        let setup = ExecutionSetup {
            library,
            scene: &task.scene,
            thresholds: &settings.thresholds,
            injection: &settings.injection,
            run_index: trial,
            tick_budget: settings.tick_budget,
        };
        let ex = execute(&setup, &task.instruction, &task.graph, &tree, |_| {}, || false, None);
        sink(TrialLine {
            task: task.name.clone(),
            trial,
            seed: settings.injection.rng_seed,
            status: ex.result.status,
            ticks_used: ex.result.ticks_used,
            dispatches: ex.result.dispatch_count(),
            cause: ex.result.primary_cause(),
        });
    }
    Ok(())
}

pub fn write_batch(path: &Path, lines: &[TrialLine]) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| load_err(dir, e))?;
    }
    let mut out = BufWriter::new(File::create(path).map_err(|e| load_err(path, e))?);
    for line in lines {
        let text = serde_json::to_string(line).expect("trial line serializes");
        writeln!(out, "{text}").map_err(|e| load_err(path, e))?;
    }
    out.flush().map_err(|e| load_err(path, e))
}

pub fn read_batch(path: &Path) -> Result<Vec<TrialLine>, ExperimentError> {
    let file = File::open(path).map_err(|e| load_err(path, e))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| load_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(&line).map_err(|e| load_err(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(lines)
}

/// Every batch file in `dir`, in file-name order.
pub fn read_batch_dir(dir: &Path) -> Result<Vec<TrialLine>, ExperimentError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(load_err(dir, e)),
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_batch(&p)?);
    }
    Ok(all)
}
