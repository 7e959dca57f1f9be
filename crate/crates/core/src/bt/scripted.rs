//! A world whose outcomes are fixed in advance, for exercising tick
//! semantics without a simulator.

use std::collections::{BTreeMap, HashMap, VecDeque};

use super::{DispatchRequest, DispatchTicket, GateRequest, LeafOutcome, WorldInterface};
use crate::modes::{ErrorCategory, LocomotionMode, ManipulationMode};
use crate::morphology::{ChoiceSource, MorphologyChoice};
use crate::predicate::Predicate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scripted {
    pub outcome: LeafOutcome,
    /// Ticks until the outcome is observable; 1 means the dispatching tick.
    pub duration: u64,
}

impl Scripted {
    pub fn success(duration: u64) -> Self {
        Scripted {
            outcome: LeafOutcome::Success,
            duration,
        }
    }

    pub fn failure(category: ErrorCategory, duration: u64) -> Self {
        Scripted {
            outcome: LeafOutcome::Failure(category),
            duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchRecord {
    pub tick: u64,
    pub node_id: String,
    pub skill: String,
    pub morphology: Option<MorphologyChoice>,
}

/// Outcomes are looked up by node id, then by skill name, then fall back
/// to the default. Each dispatch consumes the front of its queue; the last
/// entry of a queue repeats once the rest are used up.
#[derive(Debug, Clone)]
pub struct ScriptedWorld {
    by_node: HashMap<String, VecDeque<Scripted>>,
    by_skill: HashMap<String, VecDeque<Scripted>>,
    default: Scripted,
    conditions: HashMap<String, bool>,
    gate: Result<MorphologyChoice, ErrorCategory>,
    pending: BTreeMap<DispatchTicket, (u64, LeafOutcome)>,
    next_ticket: u64,
    pub dispatches: Vec<DispatchRecord>,
    pub condition_checks: Vec<String>,
}

impl Default for ScriptedWorld {
    fn default() -> Self {
        ScriptedWorld {
            by_node: HashMap::new(),
            by_skill: HashMap::new(),
            default: Scripted::success(1),
            conditions: HashMap::new(),
            gate: Ok(MorphologyChoice {
                manipulation: ManipulationMode::SingleRight,
                locomotion: LocomotionMode::Wheeled,
                source: ChoiceSource::Rule,
                rationale: "scripted".into(),
            }),
            pending: BTreeMap::new(),
            next_ticket: 0,
            dispatches: Vec::new(),
            condition_checks: Vec::new(),
        }
    }
}

impl ScriptedWorld {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(mut self, scripted: Scripted) -> Self {
        self.default = scripted;
        self
    }

    pub fn script_node(mut self, node_id: &str, outcomes: Vec<Scripted>) -> Self {
        self.by_node.insert(node_id.into(), outcomes.into());
        self
    }

    pub fn script_skill(mut self, skill: &str, outcomes: Vec<Scripted>) -> Self {
        self.by_skill.insert(skill.into(), outcomes.into());
        self
    }

    pub fn condition(mut self, node_id: &str, value: bool) -> Self {
        self.conditions.insert(node_id.into(), value);
        self
    }

    pub fn gate_result(mut self, result: Result<MorphologyChoice, ErrorCategory>) -> Self {
        self.gate = result;
        self
    }

    pub fn dispatches_of(&self, node_id: &str) -> usize {
        self.dispatches.iter().filter(|d| d.node_id == node_id).count()
    }

    fn next_outcome(&mut self, node_id: &str, skill: &str) -> Scripted {
        let queue = match self.by_node.get_mut(node_id) {
            Some(q) => Some(q),
            None => self.by_skill.get_mut(skill),
        };
        match queue {
            Some(q) if q.len() > 1 => q.pop_front().expect("non-empty"),
            Some(q) => q.front().copied().unwrap_or(self.default),
            None => self.default,
        }
    }
}

impl WorldInterface for ScriptedWorld {
    fn dispatch(&mut self, tick: u64, request: DispatchRequest<'_>) -> DispatchTicket {
        let scripted = self.next_outcome(request.node_id, request.skill);
        let ticket = DispatchTicket(self.next_ticket);
        self.next_ticket += 1;
        let ready = tick + scripted.duration.max(1) - 1;
        self.pending.insert(ticket, (ready, scripted.outcome));
        self.dispatches.push(DispatchRecord {
            tick,
            node_id: request.node_id.into(),
            skill: request.skill.into(),
            morphology: request.morphology.cloned(),
        });
        ticket
    }

    fn poll(&mut self, tick: u64, ticket: DispatchTicket) -> Option<LeafOutcome> {
        match self.pending.get(&ticket) {
            Some(&(ready, outcome)) if tick >= ready => {
                self.pending.remove(&ticket);
                Some(outcome)
            }
            _ => None,
        }
    }

    fn evaluate_condition(&mut self, _tick: u64, node_id: &str, _condition: &Predicate) -> LeafOutcome {
        self.condition_checks.push(node_id.into());
        if self.conditions.get(node_id).copied().unwrap_or(true) {
            LeafOutcome::Success
        } else {
            LeafOutcome::Failure(ErrorCategory::Planning)
        }
    }

    fn resolve_morphology(&mut self, _tick: u64, _gate: GateRequest<'_>) -> Result<MorphologyChoice, ErrorCategory> {
        self.gate.clone()
    }
}
