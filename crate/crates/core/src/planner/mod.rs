//! Prompt assembly and the plan/repair loop around a language model.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, Decoding, ModelClient};
use crate::modes::ErrorCategory;
use crate::motion_library::MotionLibrary;
use crate::sim::scene::{HandState, SceneSnapshot};
use crate::taskgraph::{
    parse_task_graph, validate, Issue, IssueCode, ParseError, TaskGraph, ValidationReport, TASK_GRAPH_SCHEMA,
};

const PREAMBLE: &str = include_str!("../../templates/system_preamble.txt");
const REPAIR: &str = include_str!("../../templates/repair.txt");
const REPLAN: &str = include_str!("../../templates/replan.txt");

/// Drops the `template-version:` header line.
fn template(text: &str) -> &str {
    match text.split_once('\n') {
        Some((first, rest)) if first.starts_with("template-version:") => rest,
        _ => text,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerOption {
    MorphologyGates,
    FailureRecovery,
    ConditionChecks,
}

impl PlannerOption {
    pub const ALL: [PlannerOption; 3] = [
        PlannerOption::MorphologyGates,
        PlannerOption::FailureRecovery,
        PlannerOption::ConditionChecks,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerOption::MorphologyGates => "morphology_gates",
            PlannerOption::FailureRecovery => "failure_recovery",
            PlannerOption::ConditionChecks => "condition_checks",
        }
    }

    fn describe(self) -> &'static str {
        match self {
            PlannerOption::MorphologyGates => {
                "wrap actions whose arm or locomotion mode depends on object size, weight or terrain in a `morphology_gate` node"
            }
            PlannerOption::FailureRecovery => {
                "wrap failure-prone actions in `retry` nodes, or set a node's `recovery` to the id of a subtree run when it fails"
            }
            PlannerOption::ConditionChecks => {
                "insert `condition` nodes that check predicates (at, holding, free_hand, door_open, on_surface, base_mode) around actions"
            }
        }
    }
}

impl fmt::Display for PlannerOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerOption {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlannerOption::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown planner option `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionDescriptor {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone)]
pub struct PlanningContext<'a> {
    pub library: &'a MotionLibrary,
    pub scene: &'a SceneSnapshot,
    pub enabled_options: BTreeSet<PlannerOption>,
    pub max_repair_rounds: u32,
    pub decoding: Decoding,
}

impl<'a> PlanningContext<'a> {
    pub fn new(library: &'a MotionLibrary, scene: &'a SceneSnapshot) -> Self {
        PlanningContext {
            library,
            scene,
            enabled_options: BTreeSet::new(),
            max_repair_rounds: 3,
            decoding: Decoding::default(),
        }
    }

    pub fn with_options(mut self, options: impl IntoIterator<Item = PlannerOption>) -> Self {
        self.enabled_options = options.into_iter().collect();
        self
    }

    pub fn with_max_rounds(mut self, rounds: u32) -> Self {
        self.max_repair_rounds = rounds;
        self
    }
}

/// Everything the model is shown, before rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_preamble: String,
    pub function_options: Vec<OptionDescriptor>,
    pub skill_signatures: Vec<String>,
    pub scene_summary: String,
    pub instruction: String,
    pub schema_excerpt: String,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(self.system_preamble.trim_end());
        out.push_str("\n\n## Motion library\n");
        for s in &self.skill_signatures {
            out.push_str("- ");
            out.push_str(s);
            out.push('\n');
        }
        if !self.function_options.is_empty() {
            out.push_str("\n## Function options\n");
            for o in &self.function_options {
                out.push_str(&format!("- {}: {}\n", o.name, o.description));
            }
        }
        out.push_str("\n## Scene\n");
        out.push_str(&self.scene_summary);
        out.push_str("\n## Task-graph schema\n");
        out.push_str(&self.schema_excerpt);
        out.push_str("\n\n## Instruction\n");
        out.push_str(&self.instruction);
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PlanError {
    #[error("the motion library is empty")]
    EmptyLibrary,
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("no valid task graph after {rounds} round(s); last issues: {}", summarize(.last_report))]
    PlanningFailed { rounds: u32, last_report: ValidationReport },
    #[error("model client failed in round {round}: {error}")]
    Client { round: u32, error: ClientError },
    #[error("planning cancelled before round {round}")]
    Cancelled { round: u32 },
}

fn summarize(report: &ValidationReport) -> String {
    report
        .issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn fmt_num(v: f64) -> String {
    format!("{v:.2}")
}

fn hand(h: &HandState) -> String {
    match h {
        HandState::Free => "free".into(),
        HandState::Holding(o) => format!("holding {o}"),
        HandState::Assisting(o) => format!("assisting with {o}"),
    }
}

/// One line per entity, in scene order.
pub fn summarize_scene(scene: &SceneSnapshot) -> String {
    let b = &scene.world_bounds;
    let r = &scene.robot;
    let mut out = format!(
        "world: x {}..{} m, y {}..{} m\nrobot at ({}, {}), heading {} rad, base {}, left hand {}, right hand {}\n",
        fmt_num(b.min.x),
        fmt_num(b.max.x),
        fmt_num(b.min.y),
        fmt_num(b.max.y),
        fmt_num(r.position.x),
        fmt_num(r.position.y),
        fmt_num(r.heading),
        r.base_mode,
        hand(&r.left_hand),
        hand(&r.right_hand)
    );
    for o in &scene.objects {
        out.push_str(&format!(
            "- object {} at ({}, {}), size {}x{}x{} m, mass {} kg",
            o.id,
            fmt_num(o.position.x),
            fmt_num(o.position.y),
            fmt_num(o.bbox.width),
            fmt_num(o.bbox.depth),
            fmt_num(o.bbox.height),
            fmt_num(o.mass)
        ));
        if let Some(s) = &o.on_surface {
            out.push_str(&format!(", on {s}"));
        }
        out.push('\n');
    }
    for d in &scene.doors {
        out.push_str(&format!(
            "- door {} at ({}, {}), {}, width {} m\n",
            d.id,
            fmt_num(d.position.x),
            fmt_num(d.position.y),
            if d.open { "open" } else { "closed" },
            fmt_num(d.width)
        ));
    }
    if let Some(t) = &scene.terrain {
        let max = t.cells.iter().map(|c| c.elevation).fold(f64::NEG_INFINITY, f64::max);
        let min = t.cells.iter().map(|c| c.elevation).fold(f64::INFINITY, f64::min);
        out.push_str(&format!(
            "terrain: {}x{} cells of {} m, elevation {}..{} m\n",
            t.cols,
            t.rows,
            fmt_num(t.cell_size),
            fmt_num(min),
            fmt_num(max)
        ));
    }
    out
}

pub fn assemble_prompt(instruction: &str, context: &PlanningContext<'_>) -> Result<PromptBundle, PlanError> {
    if context.library.is_empty() {
        return Err(PlanError::EmptyLibrary);
    }
    Ok(PromptBundle {
        system_preamble: template(PREAMBLE).to_string(),
        function_options: context
            .enabled_options
            .iter()
            .map(|o| OptionDescriptor {
                name: o.to_string(),
                description: o.describe().to_string(),
            })
            .collect(),
        skill_signatures: context
            .library
            .list_skills(None)
            .iter()
            .map(|s| s.signature())
            .collect(),
        scene_summary: summarize_scene(context.scene),
        instruction: instruction.to_string(),
        schema_excerpt: TASK_GRAPH_SCHEMA.to_string(),
    })
}

fn parse_issue(e: &ParseError) -> Issue {
    match e {
        ParseError::NoStructuredBlock => Issue::new(
            IssueCode::NoStructuredBlock,
            None,
            "the answer contains no JSON object; reply with the task graph as one JSON object",
        ),
        other => Issue::new(IssueCode::ParseError, None, other.to_string()),
    }
}

fn repair_section(round: u32, report: &ValidationReport) -> String {
    let issues = report
        .issues
        .iter()
        .map(|i| format!("- {i}"))
        .collect::<Vec<_>>()
        .join("\n");
    template(REPAIR)
        .replace("{round}", &round.to_string())
        .replace("{issues}", &issues)
}

/// One parse+validate pass over a model answer.
fn check_answer(answer: &str, library: &MotionLibrary) -> Result<TaskGraph, ValidationReport> {
    let graph = parse_task_graph(answer).map_err(|e| ValidationReport::from_issues(vec![parse_issue(&e)]))?;
    let report = validate(&graph, library);
    if report.valid {
        Ok(graph)
    } else {
        Err(report)
    }
}

fn repair_loop(
    base_prompt: &str,
    instruction: &str,
    context: &PlanningContext<'_>,
    client: &dyn ModelClient,
    cancelled: &dyn Fn() -> bool,
) -> Result<(TaskGraph, u32), PlanError> {
    let rounds = context.max_repair_rounds.max(1);
    let mut last = ValidationReport::from_issues(Vec::new());
    let mut prompt = base_prompt.to_string();
    for round in 1..=rounds {
        if cancelled() {
            return Err(PlanError::Cancelled { round });
        }
        let answer = client
            .complete(&prompt, &context.decoding)
            .map_err(|error| PlanError::Client { round, error })?;
        match check_answer(&answer, context.library) {
            Ok(mut graph) => {
                if graph.metadata.instruction.is_none() {
                    graph.metadata.instruction = Some(instruction.to_string());
                }
                graph.metadata.planner_attempts = Some(round);
                return Ok((graph, round));
            }
            Err(report) => {
                prompt = format!("{base_prompt}\n{}", repair_section(round, &report));
                last = report;
            }
        }
    }
    Err(PlanError::PlanningFailed {
        rounds,
        last_report: last,
    })
}

/// Plans `instruction`, re-prompting with validator feedback until the
/// answer is a valid task graph or `max_repair_rounds` calls are spent.
/// Returns the graph and the number of model calls made.
pub fn plan(
    instruction: &str,
    context: &PlanningContext<'_>,
    client: &dyn ModelClient,
) -> Result<(TaskGraph, u32), PlanError> {
    plan_cancellable(instruction, context, client, &|| false)
}

/// Like [`plan`], checking `cancelled` before each model call.
pub fn plan_cancellable(
    instruction: &str,
    context: &PlanningContext<'_>,
    client: &dyn ModelClient,
    cancelled: &dyn Fn() -> bool,
) -> Result<(TaskGraph, u32), PlanError> {
    if instruction.trim().is_empty() {
        return Err(PlanError::EmptyInstruction);
    }
    let prompt = assemble_prompt(instruction, context)?.render();
    repair_loop(&prompt, instruction, context, client, cancelled)
}

/// What the replanner is told about a failed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub instruction: String,
    pub failed_node: String,
    pub failed_skill: Option<String>,
    pub error_category: ErrorCategory,
    /// Ids of action nodes that completed successfully.
    pub completed: Vec<String>,
    pub scene: SceneSnapshot,
}

pub fn replan_prompt(run_state: &RunState, context: &PlanningContext<'_>) -> Result<String, PlanError> {
    let scene_ctx = PlanningContext {
        scene: &run_state.scene,
        ..context.clone()
    };
    let bundle = assemble_prompt(&run_state.instruction, &scene_ctx)?;
    let completed = if run_state.completed.is_empty() {
        "nothing".to_string()
    } else {
        run_state.completed.join(", ")
    };
    let failure = template(REPLAN)
        .replace("{failed_node}", &run_state.failed_node)
        .replace("{failed_skill}", run_state.failed_skill.as_deref().unwrap_or("unknown"))
        .replace("{error_category}", run_state.error_category.as_str())
        .replace("{completed}", &completed)
        .replace("{objective}", &run_state.instruction);
    Ok(format!("{}\n## Failure\n{failure}", bundle.render()))
}

/// Asks for a new graph covering what remains after a failure. The
/// answer goes through the same repair loop as [`plan`].
pub fn replan(
    run_state: &RunState,
    context: &PlanningContext<'_>,
    client: &dyn ModelClient,
) -> Result<(TaskGraph, u32), PlanError> {
    let prompt = replan_prompt(run_state, context)?;
    let scene_ctx = PlanningContext {
        scene: &run_state.scene,
        ..context.clone()
    };
    repair_loop(&prompt, &run_state.instruction, &scene_ctx, client, &|| false)
}
