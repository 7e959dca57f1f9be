use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::exec::{Binding, Bindings};
use super::{FailureInjection, Invocation, SkillOutcome, SkillStatus, World};
use crate::bt::{DispatchRequest, DispatchTicket, GateRequest, GateSlot, LeafOutcome, WorldInterface, REPLAN_SKILL};
use crate::modes::{ErrorCategory, ManipulationMode};
use crate::morphology::{
    distill_features, min_passage_width, occupancy_grid, route_exclusions, route_terrain, select_morphology,
    ChoiceSource, GeometricFeatures, MorphologyChoice,
};
use crate::motion_library::{MotionLibrary, SkillPrimitive};
use crate::predicate::{Predicate, PredicateSymbol};

/// What happened to one dispatch, for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchLog {
    pub tick: u64,
    pub node_id: String,
    pub skill: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<SkillOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A replan escalation leaf was reached after `failed_node` failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplanRequest {
    pub tick: u64,
    pub node_id: String,
    pub failed_node: String,
    pub category: ErrorCategory,
}

/// Adapts a [`World`] to the tick loop.
///
/// Executor errors (unmet preconditions, unbound references, infeasible
/// morphology) complete immediately as planning failures. A replan leaf
/// fails with the category of the failure it escalates and is recorded in
/// `replans` for the orchestrator.
pub struct SimWorld<'a> {
    pub world: World,
    library: &'a MotionLibrary,
    injection: &'a FailureInjection,
    pending: BTreeMap<u64, (u64, LeafOutcome)>,
    next_ticket: u64,
    last_failure: BTreeMap<String, ErrorCategory>,
    pub log: Vec<DispatchLog>,
    pub replans: Vec<ReplanRequest>,
}

impl<'a> SimWorld<'a> {
    pub fn new(world: World, library: &'a MotionLibrary, injection: &'a FailureInjection) -> Self {
        SimWorld {
            world,
            library,
            injection,
            pending: BTreeMap::new(),
            next_ticket: 0,
            last_failure: BTreeMap::new(),
            log: Vec::new(),
            replans: Vec::new(),
        }
    }

    fn enqueue(&mut self, ready: u64, outcome: LeafOutcome) -> DispatchTicket {
        let t = self.next_ticket;
        self.next_ticket += 1;
        self.pending.insert(t, (ready, outcome));
        DispatchTicket(t)
    }

    /// Features the gate decides on: the first entity argument is the
    /// target, and the route runs to wherever the skill moves the base.
    fn gate_features(&self, skill: &SkillPrimitive, bindings: &Bindings) -> Option<GeometricFeatures> {
        let scene = self.world.perceived_scene();
        let target = skill.params.iter().find_map(|p| match bindings.get(&p.name) {
            Some(Binding::Entity(id)) if id != "robot" => Some(id.clone()),
            _ => None,
        });
        let moves_to = skill.effects.iter().find_map(|e| {
            let robot = e.predicate == PredicateSymbol::At && e.args.first().map(String::as_str) == Some("robot");
            robot
                .then(|| crate::predicate::param_ref(&e.args[1]).and_then(|name| bindings.get(name)))
                .flatten()
        });
        let start = scene.robot.position;
        let end = match moves_to {
            Some(b) => self.world.destination(&scene, b)?,
            None => start,
        };
        let route = [start, end];
        let t = &self.world.thresholds;
        match target {
            Some(id) if scene.object(&id).is_some() || scene.door(&id).is_some() => {
                distill_features(&scene, &id, &route, t).ok()
            }
            _ => {
                let (step, class) = route_terrain(&scene, &route);
                Some(GeometricFeatures {
                    object_distance: start.distance(end),
                    min_passage_width: min_passage_width(&scene, &route_exclusions(&scene, &[]), &route, t),
                    max_step_height: step,
                    terrain_class: class,
                    occupancy_2d: occupancy_grid(&scene, t.occupancy_cell_size),
                    ..GeometricFeatures::simple(0.0, 0.0, 0.0)
                })
            }
        }
    }
}

impl WorldInterface for SimWorld<'_> {
    fn dispatch(&mut self, tick: u64, request: DispatchRequest<'_>) -> DispatchTicket {
        if request.skill == REPLAN_SKILL {
            let failed = request
                .args
                .get("failed_node")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string();
            let category = self
                .last_failure
                .get(&failed)
                .copied()
                .unwrap_or(ErrorCategory::Planning);
            self.replans.push(ReplanRequest {
                tick,
                node_id: request.node_id.to_string(),
                failed_node: failed,
                category,
            });
            self.last_failure.insert(request.node_id.to_string(), category);
            return self.enqueue(tick, LeafOutcome::Failure(category));
        }

        let invocation = Invocation {
            skill: request.skill.to_string(),
            args: request.args.clone(),
            morphology: request.morphology.cloned(),
            slot: Some(request.node_id.to_string()),
        };
        let result = self.world.execute_skill(&invocation, self.injection, self.library);
        let (ready, outcome, entry) = match result {
            Ok(out) => {
                let leaf = match out.status {
                    SkillStatus::Success => LeafOutcome::Success,
                    SkillStatus::Failure => {
                        LeafOutcome::Failure(out.error_category.unwrap_or(ErrorCategory::ExecutionDynamics))
                    }
                };
                let ready = tick + u64::from(out.ticks_elapsed.max(1)) - 1;
                (ready, leaf, (Some(out), None))
            }
            Err(e) => (
                tick,
                LeafOutcome::Failure(ErrorCategory::Planning),
                (None, Some(e.to_string())),
            ),
        };
        if let LeafOutcome::Failure(cat) = outcome {
            self.last_failure.insert(request.node_id.to_string(), cat);
        }
        self.log.push(DispatchLog {
            tick,
            node_id: request.node_id.to_string(),
            skill: request.skill.to_string(),
            outcome: entry.0,
            error: entry.1,
        });
        self.enqueue(ready, outcome)
    }

    fn poll(&mut self, tick: u64, ticket: DispatchTicket) -> Option<LeafOutcome> {
        match self.pending.get(&ticket.0) {
            Some(&(ready, outcome)) if tick >= ready => {
                self.pending.remove(&ticket.0);
                Some(outcome)
            }
            _ => None,
        }
    }

    fn evaluate_condition(&mut self, _tick: u64, _node_id: &str, condition: &Predicate) -> LeafOutcome {
        match self.world.evaluate_predicate(condition, &Bindings::new()) {
            Ok(true) => LeafOutcome::Success,
            Ok(false) | Err(_) => LeafOutcome::Failure(ErrorCategory::Planning),
        }
    }

    fn resolve_morphology(&mut self, _tick: u64, gate: GateRequest<'_>) -> Result<MorphologyChoice, ErrorCategory> {
        let current = self.world.scene.robot.base_mode;
        let Some(skill) = gate.skill.and_then(|s| self.library.get(s)) else {
            return Ok(MorphologyChoice {
                manipulation: ManipulationMode::None,
                locomotion: current,
                source: ChoiceSource::Rule,
                rationale: "no skill under gate".into(),
            });
        };
        let empty = BTreeMap::new();
        let bindings = self
            .world
            .bind_args(skill, gate.args.unwrap_or(&empty))
            .map_err(|_| ErrorCategory::Planning)?;
        let features = self.gate_features(skill, &bindings).ok_or(ErrorCategory::Planning)?;
        let mut choice =
            select_morphology(&features, skill, &self.world.thresholds).map_err(|_| ErrorCategory::Planning)?;
        match gate.slot {
            GateSlot::Both => {}
            GateSlot::Manipulation => {
                choice.locomotion = if skill.locomotion_modes.iter().any(|s| s.admits(current)) {
                    current
                } else {
                    choice.locomotion
                };
            }
            GateSlot::Locomotion => choice.manipulation = ManipulationMode::None,
        }
        Ok(choice)
    }
}
