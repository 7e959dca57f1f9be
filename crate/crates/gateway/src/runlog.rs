//! Append-only line-delimited run logs.
//!
//! A log starts with a header line; state changes, execution events, the
//! replan and the final result follow as they happen. The run id is the
//! file name and is not written inside, so identical runs produce
//! identical bytes.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use locoplan_core::bt::{ExecutionEvent, RunResult, RunStatus};
use locoplan_core::ErrorCategory;

use crate::record::{graph_serde, PlanningSummary, RunOptions, RunRecord, RunState};
use locoplan_core::taskgraph::TaskGraph;

pub const RUN_LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogLine {
    Header {
        format_version: u32,
        instruction: String,
        options: RunOptions,
        seed: u64,
        #[serde(with = "graph_serde")]
        graph: Option<TaskGraph>,
        planning: PlanningSummary,
    },
    State {
        state: RunState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Event(ExecutionEvent),
    Replan {
        #[serde(with = "graph_serde")]
        graph: Option<TaskGraph>,
    },
    Result {
        status: RunStatus,
        ticks_used: u64,
        failure_causes: BTreeMap<ErrorCategory, u32>,
    },
}

impl LogLine {
    pub fn header(record: &RunRecord) -> Self {
        LogLine::Header {
            format_version: RUN_LOG_FORMAT_VERSION,
            instruction: record.instruction.clone(),
            options: record.options.clone(),
            seed: record.seed,
            graph: record.graph.clone(),
            planning: record.planning.clone(),
        }
    }

    pub fn result(result: &RunResult) -> Self {
        LogLine::Result {
            status: result.status,
            ticks_used: result.ticks_used,
            failure_causes: result.failure_causes.clone(),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("log line serializes");
        s.push('\n');
        s
    }
}

pub fn log_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.jsonl"))
}

/// Single writer for one run's log; every line is flushed as written.
pub struct RunLogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RunLogWriter {
    pub fn create(dir: &Path, run_id: &str) -> Result<Self, RunLogError> {
        let path = log_path(dir, run_id);
        let io = |source| RunLogError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        Ok(RunLogWriter {
            path,
            out: BufWriter::new(file),
        })
    }

    /// Reopens an existing log to continue it.
    pub fn append_to(dir: &Path, run_id: &str) -> Result<Self, RunLogError> {
        let path = log_path(dir, run_id);
        let file = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|source| RunLogError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(RunLogWriter {
            path,
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, line: &LogLine) -> Result<(), RunLogError> {
        let path = &self.path;
        let io = |source| RunLogError::Io {
            path: path.clone(),
            source,
        };
        self.out.write_all(line.to_line().as_bytes()).map_err(io)?;
        self.out.flush().map_err(io)
    }
}

/// Rebuilds a record from its log. A torn last line (from a crash while
/// writing) is ignored.
pub fn parse_log(run_id: &str, text: &str) -> Result<RunRecord, RunLogError> {
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    let malformed = |line: usize, reason: String| RunLogError::Malformed { line: line + 1, reason };
    let Some((_, first)) = lines.next() else {
        return Err(malformed(0, "empty log".into()));
    };
    let mut record = match serde_json::from_str::<LogLine>(first).map_err(|e| malformed(0, e.to_string()))? {
        LogLine::Header {
            format_version,
            instruction,
            options,
            seed,
            graph,
            planning,
        } => {
            if format_version != RUN_LOG_FORMAT_VERSION {
                return Err(malformed(0, format!("unsupported format_version {format_version}")));
            }
            RunRecord {
                run_id: run_id.to_string(),
                instruction,
                graph,
                options,
                seed,
                state: RunState::Planned,
                planning,
                error: None,
                replanned_graph: None,
                events: Vec::new(),
                result: None,
            }
        }
        _ => return Err(malformed(0, "first line is not a header".into())),
    };
    while let Some((i, raw)) = lines.next() {
        let torn = !raw.ends_with('\n') && lines.peek().is_none();
        let line = match serde_json::from_str::<LogLine>(raw) {
            Ok(l) => l,
            Err(_) if torn => break,
            Err(e) => return Err(malformed(i, e.to_string())),
        };
        match line {
            LogLine::Header { .. } => return Err(malformed(i, "second header".into())),
            LogLine::State { state, error } => {
                if !record.state.can_transition_to(state) {
                    return Err(malformed(i, format!("illegal transition {} -> {state}", record.state)));
                }
                record.state = state;
                if error.is_some() {
                    record.error = error;
                }
            }
            LogLine::Event(e) => record.events.push(e),
            LogLine::Replan { graph } => record.replanned_graph = graph,
            LogLine::Result {
                status,
                ticks_used,
                failure_causes,
            } => {
                record.result = Some(RunResult {
                    status,
                    ticks_used,
                    events: record.events.clone(),
                    failure_causes,
                })
            }
        }
    }
    Ok(record)
}

pub fn load_log(path: &Path) -> Result<RunRecord, RunLogError> {
    let text = fs::read_to_string(path).map_err(|source| RunLogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let run_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    parse_log(run_id, &text)
}

/// Every run log in `dir`, in run-id order.
pub fn load_dir(dir: &Path) -> Result<Vec<RunRecord>, RunLogError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(RunLogError::Io {
                path: dir.to_path_buf(),
                source,
            })
        }
    };
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_log(p)).collect()
}
