//! The run lifecycle: plan, approve, execute, abort, stream and report.
//!
//! Planning happens on the submitting thread. Each approved run gets its
//! own thread, world and tick loop, and is the only writer of its log.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use locoplan_core::bt::{BehaviorTree, ExecutionEvent};
use locoplan_core::client::ModelClient;
use locoplan_core::morphology::Thresholds;
use locoplan_core::planner::{self, PlanError, PlanningContext};
use locoplan_core::sim::scene::SceneSnapshot;
use locoplan_core::sim::FailureInjection;
use locoplan_core::taskgraph::TaskGraph;
use locoplan_core::MotionLibrary;

use crate::execute::{build_tree, execute, ExecutionSetup};
use crate::metrics::{report_metrics, MetricsError, MetricsReport, TrialSummary};
use crate::record::{state_for, PlanningSummary, RunOptions, RunRecord, RunState};
use crate::runlog::{load_dir, log_path, LogLine, RunLogError, RunLogWriter};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("cannot go from {from} to {to}")]
    InvalidTransition { from: RunState, to: RunState },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub instruction: String,
    /// Scene to plan and run in; the gateway's default scene if absent.
    #[serde(default)]
    pub scene: Option<SceneSnapshot>,
    #[serde(default)]
    pub options: RunOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub auto_approve: bool,
}

pub struct GatewayConfig {
    pub library: MotionLibrary,
    pub client: Arc<dyn ModelClient>,
    pub thresholds: Thresholds,
    /// Failure settings; each run replaces the seed with its own.
    pub injection: FailureInjection,
    pub default_scene: SceneSnapshot,
    /// Where run logs are kept. `None` keeps them in memory only.
    pub runs_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
}

struct Inner {
    config: GatewayConfig,
    runs: Mutex<BTreeMap<String, Arc<RunHandle>>>,
}

struct RunHandle {
    run: Mutex<LiveRun>,
    changed: Condvar,
    abort: AtomicBool,
    /// Set while an executor thread owns the tick loop.
    active: AtomicBool,
}

struct LiveRun {
    record: RunRecord,
    scene: SceneSnapshot,
    tree: Option<BehaviorTree>,
    log: String,
    writer: Option<RunLogWriter>,
}

impl LiveRun {
    fn append(&mut self, line: LogLine) {
        if let Some(w) = &mut self.writer {
            if let Err(e) = w.append(&line) {
                eprintln!("run {}: {e}", self.record.run_id);
            }
        }
        self.log.push_str(&line.to_line());
    }

    fn set_state(&mut self, state: RunState, error: Option<String>) {
        debug_assert!(self.record.state.can_transition_to(state));
        self.record.state = state;
        if error.is_some() {
            self.record.error = error.clone();
        }
        self.append(LogLine::State { state, error });
    }
}

impl RunHandle {
    fn lock(&self) -> MutexGuard<'_, LiveRun> {
        self.run.lock().expect("run lock")
    }
}

impl Gateway {
    /// Starts a gateway, picking up the logs of earlier runs.
    pub fn open(config: GatewayConfig) -> Result<Self, GatewayError> {
        let mut runs = BTreeMap::new();
        if let Some(dir) = &config.runs_dir {
            for record in load_dir(dir)? {
                let path = log_path(dir, &record.run_id);
                let log = std::fs::read_to_string(&path).map_err(|source| RunLogError::Io {
                    path: path.clone(),
                    source,
                })?;
                // Approving a reloaded run continues its log; the scene
                // is not logged, so it runs in the default scene.
                let writer = if record.state.is_terminal() {
                    None
                } else {
                    Some(RunLogWriter::append_to(dir, &record.run_id)?)
                };
                let handle = RunHandle {
                    run: Mutex::new(LiveRun {
                        scene: config.default_scene.clone(),
                        tree: None,
                        record,
                        log,
                        writer,
                    }),
                    changed: Condvar::new(),
                    abort: AtomicBool::new(false),
                    active: AtomicBool::new(false),
                };
                let id = handle.lock().record.run_id.clone();
                runs.insert(id, Arc::new(handle));
            }
        }
        Ok(Gateway {
            inner: Arc::new(Inner {
                config,
                runs: Mutex::new(runs),
            }),
        })
    }

    pub fn library(&self) -> &MotionLibrary {
        &self.inner.config.library
    }

    fn handle(&self, run_id: &str) -> Result<Arc<RunHandle>, GatewayError> {
        self.inner
            .runs
            .lock()
            .expect("runs lock")
            .get(run_id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownRun(run_id.to_string()))
    }

    /// Plans the instruction and registers a run. A run whose planning
    /// failed is still created, in state `failed`, carrying the issues.
    pub fn submit_instruction(&self, req: SubmitRequest) -> Result<String, GatewayError> {
        if req.instruction.trim().is_empty() {
            return Err(GatewayError::EmptyInstruction);
        }
        let cfg = &self.inner.config;
        let scene = req.scene.unwrap_or_else(|| cfg.default_scene.clone());
        scene
            .validate()
            .map_err(|e| GatewayError::InvalidScene(e.to_string()))?;

        let ctx = PlanningContext::new(&cfg.library, &scene).with_options(req.options.planner_options.iter().copied());
        let mut error = None;
        let (graph, planning) = match planner::plan(&req.instruction, &ctx, cfg.client.as_ref()) {
            Ok((g, rounds)) => (
                Some(g),
                PlanningSummary {
                    rounds,
                    issues: Vec::new(),
                },
            ),
            Err(PlanError::PlanningFailed { rounds, last_report }) => {
                error = Some(format!("planning failed after {rounds} round(s)"));
                (
                    None,
                    PlanningSummary {
                        rounds,
                        issues: last_report.issues,
                    },
                )
            }
            Err(e) => {
                let rounds = match &e {
                    PlanError::Client { round, .. } => *round,
                    _ => 0,
                };
                error = Some(e.to_string());
                (
                    None,
                    PlanningSummary {
                        rounds,
                        issues: Vec::new(),
                    },
                )
            }
        };
        let tree = match &graph {
            Some(g) => match build_tree(g, req.options.recovery.as_ref(), &cfg.library) {
                Ok(t) => Some(t),
                Err(e) => {
                    error = Some(e);
                    None
                }
            },
            None => None,
        };

        let run_id = uuid::Uuid::now_v7().simple().to_string();
        let writer = match &cfg.runs_dir {
            Some(dir) => Some(RunLogWriter::create(dir, &run_id)?),
            None => None,
        };
        let record = RunRecord {
            run_id: run_id.clone(),
            instruction: req.instruction,
            graph,
            options: req.options,
            seed: req.seed,
            state: RunState::Planned,
            planning,
            error: None,
            replanned_graph: None,
            events: Vec::new(),
            result: None,
        };
        let mut live = LiveRun {
            scene,
            tree,
            log: String::new(),
            writer,
            record,
        };
        live.append(LogLine::header(&live.record));
        match (&live.tree, error) {
            (Some(_), None) => live.set_state(RunState::AwaitingApproval, None),
            (_, error) => live.set_state(RunState::Failed, error),
        }
        let handle = Arc::new(RunHandle {
            run: Mutex::new(live),
            changed: Condvar::new(),
            abort: AtomicBool::new(false),
            active: AtomicBool::new(false),
        });
        self.inner
            .runs
            .lock()
            .expect("runs lock")
            .insert(run_id.clone(), handle);
        if req.auto_approve && self.state(&run_id)? == RunState::AwaitingApproval {
            self.approve(&run_id)?;
        }
        Ok(run_id)
    }

    pub fn approve(&self, run_id: &str) -> Result<RunState, GatewayError> {
        let handle = self.handle(run_id)?;
        {
            let mut live = handle.lock();
            let from = live.record.state;
            if from != RunState::AwaitingApproval {
                return Err(GatewayError::InvalidTransition {
                    from,
                    to: RunState::Executing,
                });
            }
            live.set_state(RunState::Executing, None);
            handle.active.store(true, Ordering::SeqCst);
        }
        handle.changed.notify_all();
        let inner = Arc::clone(&self.inner);
        let h = Arc::clone(&handle);
        thread::spawn(move || run_execution(&inner, &h));
        Ok(RunState::Executing)
    }

    /// Stops a run between ticks and waits until it has stopped. Returns
    /// the state the run ended in, which is `succeeded` or `failed` if it
    /// finished before noticing the request.
    pub fn abort(&self, run_id: &str) -> Result<RunState, GatewayError> {
        let handle = self.handle(run_id)?;
        let mut live = handle.lock();
        let from = live.record.state;
        if from.is_terminal() {
            return Err(GatewayError::InvalidTransition {
                from,
                to: RunState::Aborted,
            });
        }
        if from != RunState::Executing || !handle.active.load(Ordering::SeqCst) {
            live.set_state(RunState::Aborted, None);
            drop(live);
            handle.changed.notify_all();
            return Ok(RunState::Aborted);
        }
        handle.abort.store(true, Ordering::SeqCst);
        while !live.record.state.is_terminal() {
            live = handle.changed.wait(live).expect("run lock");
        }
        Ok(live.record.state)
    }

    pub fn state(&self, run_id: &str) -> Result<RunState, GatewayError> {
        Ok(self.handle(run_id)?.lock().record.state)
    }

    pub fn get_run(&self, run_id: &str) -> Result<RunRecord, GatewayError> {
        Ok(self.handle(run_id)?.lock().record.clone())
    }

    /// The run's log exactly as written.
    pub fn run_log(&self, run_id: &str) -> Result<String, GatewayError> {
        Ok(self.handle(run_id)?.lock().log.clone())
    }

    /// Run ids with their states, oldest first.
    pub fn list_runs(&self) -> Vec<(String, RunState)> {
        let runs: Vec<_> = self.inner.runs.lock().expect("runs lock").values().cloned().collect();
        runs.iter()
            .map(|h| {
                let live = h.lock();
                (live.record.run_id.clone(), live.record.state)
            })
            .collect()
    }

    /// Blocks until the run is terminal or `timeout` passes.
    pub fn wait_terminal(&self, run_id: &str, timeout: Duration) -> Result<RunState, GatewayError> {
        let handle = self.handle(run_id)?;
        let deadline = Instant::now().checked_add(timeout);
        let mut live = handle.lock();
        while !live.record.state.is_terminal() {
            live = match deadline {
                None => handle.changed.wait(live).expect("run lock"),
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        break;
                    }
                    handle.changed.wait_timeout(live, left).expect("run lock").0
                }
            };
        }
        Ok(live.record.state)
    }

    /// Events from index `from` on, delivered as they happen.
    pub fn stream_events(&self, run_id: &str, from: usize) -> Result<EventCursor, GatewayError> {
        Ok(EventCursor {
            handle: self.handle(run_id)?,
            next: from,
        })
    }

    pub fn report_metrics(&self, task: Option<&str>) -> Result<MetricsReport, GatewayError> {
        let runs: Vec<_> = self.inner.runs.lock().expect("runs lock").values().cloned().collect();
        let summaries: Vec<TrialSummary> = runs.iter().map(|h| TrialSummary::from(&h.lock().record)).collect();
        Ok(report_metrics(&summaries, task)?)
    }
}

/// A subscriber's position in one run's event list.
pub struct EventCursor {
    handle: Arc<RunHandle>,
    next: usize,
}

impl EventCursor {
    /// The next event, waiting for it if the run is still going. `None`
    /// once the run is terminal and every event has been delivered.
    pub fn next_event(&mut self) -> Option<ExecutionEvent> {
        let mut live = self.handle.lock();
        loop {
            if let Some(e) = live.record.events.get(self.next) {
                self.next += 1;
                return Some(e.clone());
            }
            if live.record.state.is_terminal() {
                return None;
            }
            live = self.handle.changed.wait(live).expect("run lock");
        }
    }

    /// Index of the next event this cursor will deliver.
    pub fn position(&self) -> usize {
        self.next
    }
}

impl Iterator for EventCursor {
    type Item = ExecutionEvent;

    fn next(&mut self) -> Option<ExecutionEvent> {
        self.next_event()
    }
}

fn run_execution(inner: &Inner, handle: &RunHandle) {
    let cfg = &inner.config;
    let (record, scene, tree) = {
        let live = handle.lock();
        (live.record.clone(), live.scene.clone(), live.tree.clone())
    };
    // Runs reloaded from disk keep only their graph.
    let tree = tree.or_else(|| {
        let g = record.graph.as_ref()?;
        build_tree(g, record.options.recovery.as_ref(), &cfg.library).ok()
    });
    let (Some(graph), Some(tree)) = (record.graph.as_ref(), tree) else {
        let mut live = handle.lock();
        live.set_state(RunState::Failed, Some("run has no task graph".into()));
        handle.active.store(false, Ordering::SeqCst);
        drop(live);
        handle.changed.notify_all();
        return;
    };
    let injection = FailureInjection {
        rng_seed: record.seed,
        ..cfg.injection.clone()
    };
    let setup = ExecutionSetup {
        library: &cfg.library,
        scene: &scene,
        thresholds: &cfg.thresholds,
        injection: &injection,
        run_index: 0,
        tick_budget: record.options.tick_budget,
    };
    let interval = Duration::from_millis(record.options.tick_interval_ms);
    let mut first_tick = true;
    let mut replanner = |state: planner::RunState| -> Option<(TaskGraph, BehaviorTree)> {
        let ctx = PlanningContext::new(&cfg.library, &state.scene)
            .with_options(record.options.planner_options.iter().copied());
        let (g, _) = planner::replan(&state, &ctx, cfg.client.as_ref()).ok()?;
        let t = build_tree(&g, record.options.recovery.as_ref(), &cfg.library).ok()?;
        let mut live = handle.lock();
        live.record.replanned_graph = Some(g.clone());
        live.append(LogLine::Replan { graph: Some(g.clone()) });
        Some((g, t))
    };
    let execution = execute(
        &setup,
        &record.instruction,
        graph,
        &tree,
        |e| {
            let mut live = handle.lock();
            live.record.events.push(e.clone());
            live.append(LogLine::Event(e.clone()));
            drop(live);
            handle.changed.notify_all();
        },
        || {
            if !first_tick && !interval.is_zero() {
                thread::sleep(interval);
            }
            first_tick = false;
            handle.abort.load(Ordering::SeqCst)
        },
        Some(&mut replanner),
    );
    let mut live = handle.lock();
    let state = state_for(execution.result.status);
    live.append(LogLine::result(&execution.result));
    live.record.result = Some(execution.result);
    live.set_state(state, None);
    handle.active.store(false, Ordering::SeqCst);
    drop(live);
    handle.changed.notify_all();
}
