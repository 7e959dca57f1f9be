use std::collections::BTreeMap;

use rand::Rng;
use serde_json::Value;

use super::scene::{HandState, Point, SceneSnapshot};
use super::{ExecError, FailureInjection, Invocation, SkillOutcome, SkillStatus, World};
use crate::modes::{ErrorCategory, LocomotionMode, ManipulationMode};
use crate::morphology::{
    doors_crossed, min_passage_width, route_exclusions, route_terrain, wrap_angle, ChoiceSource, GeometricFeatures,
    MorphologyChoice,
};
use crate::motion_library::{MotionLibrary, ParamKind, SkillPrimitive};
use crate::predicate::{param_ref, Predicate, PredicateSymbol};
use crate::refs::SymbolicRef;
use crate::sim::scene::TerrainClass;

/// A resolved argument value.
#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    /// `robot`, an object id or a door id.
    Entity(String),
    Point(Point),
    Word(String),
    Number(f64),
}

pub type Bindings = BTreeMap<String, Binding>;

fn unbound(what: impl Into<String>) -> ExecError {
    ExecError::UnboundReference(what.into())
}

impl World {
    fn is_entity(&self, id: &str) -> bool {
        self.scene.entity_position(id).is_some()
    }

    /// Resolves a `$scene.` reference or a literal string.
    pub fn resolve_text(&self, text: &str) -> Result<Binding, ExecError> {
        match SymbolicRef::parse(text) {
            Some(Err(msg)) => Err(unbound(msg)),
            Some(Ok(SymbolicRef::Robot)) => Ok(Binding::Entity("robot".into())),
            Some(Ok(SymbolicRef::Nearest(prefix))) => {
                let perceived = self.perceived_scene();
                let robot = perceived.robot.position;
                perceived
                    .objects
                    .iter()
                    .filter(|o| o.id.starts_with(&prefix))
                    .min_by(|a, b| {
                        robot
                            .distance(a.position)
                            .total_cmp(&robot.distance(b.position))
                            .then_with(|| a.id.cmp(&b.id))
                    })
                    .map(|o| Binding::Entity(o.id.clone()))
                    .ok_or_else(|| unbound(text))
            }
            None if self.is_entity(text) => Ok(Binding::Entity(text.to_string())),
            None => Ok(Binding::Word(text.to_string())),
        }
    }

    fn resolve_param(&self, name: &str, kind: ParamKind, value: &Value) -> Result<Binding, ExecError> {
        let b = match value {
            Value::String(s) => self.resolve_text(s)?,
            Value::Number(n) => Binding::Number(n.as_f64().ok_or_else(|| unbound(name))?),
            Value::Array(items) if items.len() == 2 => {
                let x = items[0].as_f64().ok_or_else(|| unbound(name))?;
                let y = items[1].as_f64().ok_or_else(|| unbound(name))?;
                Binding::Point(Point::new(x, y))
            }
            _ => return Err(unbound(name)),
        };
        let ok = match (kind, &b) {
            (ParamKind::ObjectRef, Binding::Entity(id)) => self.scene.object(id).is_some(),
            (ParamKind::LocationRef, Binding::Entity(_) | Binding::Point(_)) => true,
            (ParamKind::Arm | ParamKind::Text, Binding::Word(_) | Binding::Entity(_)) => true,
            (ParamKind::Number, Binding::Number(_)) => true,
            _ => false,
        };
        if !ok {
            return Err(unbound(format!("{name} = {value}")));
        }
        if let Binding::Point(p) = b {
            if !p.is_finite() || !self.scene.world_bounds.contains(p) {
                return Err(unbound(format!("{name} = {value} (outside the world)")));
            }
        }
        Ok(b)
    }

    pub fn bind_args(&self, skill: &SkillPrimitive, args: &BTreeMap<String, Value>) -> Result<Bindings, ExecError> {
        let mut out = Bindings::new();
        for p in &skill.params {
            match args.get(&p.name) {
                Some(v) => {
                    out.insert(p.name.clone(), self.resolve_param(&p.name, p.kind, v)?);
                }
                None if p.required => return Err(unbound(format!("missing argument `{}`", p.name))),
                None => {}
            }
        }
        Ok(out)
    }

    fn predicate_arg(&self, arg: &str, bindings: &Bindings) -> Result<Binding, ExecError> {
        match param_ref(arg) {
            Some(name) => bindings.get(name).cloned().ok_or_else(|| unbound(arg)),
            None => self.resolve_text(arg),
        }
    }

    /// Pure evaluation against the true scene with the default `at`
    /// tolerance.
    pub fn evaluate_predicate(&self, predicate: &Predicate, bindings: &Bindings) -> Result<bool, ExecError> {
        self.evaluate_in(&self.scene, predicate, bindings, self.config.at_tolerance)
    }

    fn evaluate_in(
        &self,
        scene: &SceneSnapshot,
        predicate: &Predicate,
        bindings: &Bindings,
        at_limit: f64,
    ) -> Result<bool, ExecError> {
        if !predicate.arity_ok() {
            return Err(unbound(predicate.to_string()));
        }
        let args = predicate
            .args
            .iter()
            .map(|a| self.predicate_arg(a, bindings))
            .collect::<Result<Vec<_>, _>>()?;
        let entity = |b: &Binding| match b {
            Binding::Entity(id) => Ok(id.clone()),
            Binding::Word(w) => Err(unbound(w.clone())),
            other => Err(unbound(format!("{other:?}"))),
        };
        let position = |b: &Binding| match b {
            Binding::Point(p) => Ok(*p),
            b => {
                let id = entity(b)?;
                scene.entity_position(&id).ok_or_else(|| unbound(id))
            }
        };
        let value = match predicate.predicate {
            PredicateSymbol::At => position(&args[0])?.distance(position(&args[1])?) <= at_limit,
            PredicateSymbol::Holding => scene.robot.is_carrying(&entity(&args[0])?),
            PredicateSymbol::FreeHand => scene.robot.left_hand.is_free() || scene.robot.right_hand.is_free(),
            PredicateSymbol::DoorOpen => {
                let id = entity(&args[0])?;
                scene.door(&id).ok_or_else(|| unbound(id))?.open
            }
            PredicateSymbol::OnSurface => {
                let id = entity(&args[0])?;
                let surface = entity(&args[1])?;
                scene.object(&id).ok_or_else(|| unbound(id))?.on_surface.as_deref() == Some(surface.as_str())
            }
            PredicateSymbol::BaseMode => {
                let mode = match &args[0] {
                    Binding::Word(w) | Binding::Entity(w) => w.parse::<LocomotionMode>().map_err(unbound)?,
                    other => return Err(unbound(format!("{other:?}"))),
                };
                scene.robot.base_mode == mode
            }
        };
        Ok(value != predicate.negated)
    }

    /// Morphology used when no gate chose one: the `arm` argument if
    /// given, else the right arm, keeping the current base mode when the
    /// skill allows it.
    pub fn default_morphology(&self, skill: &SkillPrimitive, bindings: &Bindings) -> MorphologyChoice {
        MorphologyChoice {
            manipulation: default_manipulation(skill, bindings),
            locomotion: default_locomotion(skill, self.scene.robot.base_mode),
            source: ChoiceSource::Rule,
            rationale: "default".into(),
        }
    }

    fn effective_morphology(
        &self,
        skill: &SkillPrimitive,
        bindings: &Bindings,
        requested: Option<&MorphologyChoice>,
    ) -> Result<(ManipulationMode, LocomotionMode), ExecError> {
        let Some(choice) = requested else {
            let d = self.default_morphology(skill, bindings);
            return Ok((d.manipulation, d.locomotion));
        };
        let manipulation = if !skill.manipulates() {
            ManipulationMode::None
        } else if choice.manipulation == ManipulationMode::None {
            default_manipulation(skill, bindings)
        } else if skill.manipulation_modes.contains(&choice.manipulation) {
            choice.manipulation
        } else {
            return Err(ExecError::UnsupportedMorphology(format!(
                "`{}` does not support {}",
                skill.name, choice.manipulation
            )));
        };
        if !skill.locomotion_modes.iter().any(|s| s.admits(choice.locomotion)) {
            return Err(ExecError::UnsupportedMorphology(format!(
                "`{}` does not support {}",
                skill.name, choice.locomotion
            )));
        }
        Ok((manipulation, choice.locomotion))
    }

    fn binding_position(&self, scene: &SceneSnapshot, b: &Binding) -> Option<Point> {
        match b {
            Binding::Point(p) => Some(*p),
            Binding::Entity(id) => scene.entity_position(id),
            _ => None,
        }
    }

    /// Where the base ends up when moving to `target`: short of it by the
    /// standoff when something stands there, exactly on it otherwise.
    pub(crate) fn destination(&self, scene: &SceneSnapshot, target: &Binding) -> Option<Point> {
        let goal = self.binding_position(scene, target)?;
        let robot = scene.robot.position;
        let occupied = match target {
            Binding::Entity(_) => true,
            _ => scene
                .objects
                .iter()
                .any(|o| !scene.robot.is_carrying(&o.id) && o.position.distance(goal) < self.config.standoff),
        };
        let d = robot.distance(goal);
        if !occupied {
            return Some(goal);
        }
        if d <= self.config.standoff {
            return Some(robot);
        }
        let k = (d - self.config.standoff) / d;
        Some(scene.world_bounds.clamp(Point::new(
            robot.x + (goal.x - robot.x) * k,
            robot.y + (goal.y - robot.y) * k,
        )))
    }

    fn check_capabilities(
        &self,
        scene: &SceneSnapshot,
        skill: &SkillPrimitive,
        bindings: &Bindings,
        manipulation: ManipulationMode,
        locomotion: LocomotionMode,
    ) -> Result<(), ExecError> {
        let t = &self.thresholds;
        let entities: Vec<&str> = bindings
            .values()
            .filter_map(|b| match b {
                Binding::Entity(id) if id != "robot" => Some(id.as_str()),
                _ => None,
            })
            .collect();
        for effect in &skill.effects {
            let args = effect
                .args
                .iter()
                .map(|a| self.predicate_arg(a, bindings))
                .collect::<Result<Vec<_>, _>>()?;
            match effect.predicate {
                PredicateSymbol::Holding => {
                    let Binding::Entity(id) = &args[0] else { continue };
                    let obj = scene.object(id).ok_or_else(|| unbound(id.clone()))?;
                    let features = GeometricFeatures::simple(obj.bbox.width, obj.mass, 0.0);
                    if manipulation.is_single() && crate::morphology::needs_dual(&features, t) {
                        return Err(ExecError::UnsupportedMorphology(format!(
                            "`{id}` ({:.2} m, {:.1} kg) is beyond a single arm",
                            obj.bbox.width, obj.mass
                        )));
                    }
                    let r = &scene.robot;
                    let hands_free = match manipulation {
                        ManipulationMode::SingleLeft => r.left_hand.is_free(),
                        ManipulationMode::SingleRight => r.right_hand.is_free(),
                        ManipulationMode::Dual => r.left_hand.is_free() && r.right_hand.is_free(),
                        ManipulationMode::None => false,
                    };
                    if !hands_free {
                        return Err(ExecError::PreconditionUnmet(PredicateSymbol::FreeHand));
                    }
                }
                PredicateSymbol::At if args[0] == Binding::Entity("robot".into()) => {
                    let Some(dest) = self.destination(scene, &args[1]) else {
                        return Err(unbound(effect.to_string()));
                    };
                    let route = [scene.robot.position, dest];
                    let exclude = route_exclusions(scene, &entities);
                    if doors_crossed(scene, &exclude, &route, t).iter().any(|d| !d.open) {
                        return Err(ExecError::PreconditionUnmet(PredicateSymbol::DoorOpen));
                    }
                    let (step, class) = route_terrain(scene, &route);
                    let features = GeometricFeatures {
                        min_passage_width: min_passage_width(scene, &exclude, &route, t),
                        max_step_height: step,
                        terrain_class: class,
                        ..GeometricFeatures::simple(0.0, 0.0, 0.0)
                    };
                    if let Some(reason) = crate::morphology::route_infeasibility(&features, t) {
                        return Err(ExecError::UnsupportedMorphology(reason));
                    }
                    if locomotion == LocomotionMode::Wheeled && crate::morphology::needs_legs(&features, t) {
                        return Err(ExecError::UnsupportedMorphology(format!(
                            "wheels cannot cross a {step:.3} m step on {} terrain",
                            match class {
                                TerrainClass::Flat => "flat",
                                TerrainClass::Steps => "stepped",
                                TerrainClass::Rough => "rough",
                            }
                        )));
                    }
                }
                PredicateSymbol::OnSurface => {
                    let (Binding::Entity(obj), Binding::Entity(surface)) = (&args[0], &args[1]) else {
                        continue;
                    };
                    if scene.robot.is_carrying(surface) {
                        return Err(ExecError::InvalidPlacement(format!(
                            "`{surface}` is in the robot's hands"
                        )));
                    }
                    // Walk down the support chain so no object ends up under itself.
                    let mut below = Some(surface.as_str());
                    while let Some(s) = below {
                        if s == obj {
                            return Err(ExecError::InvalidPlacement(format!("`{surface}` rests on `{obj}`")));
                        }
                        below = scene.object(s).and_then(|o| o.on_surface.as_deref());
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn apply_effects(
        &self,
        scene: &mut SceneSnapshot,
        skill: &SkillPrimitive,
        bindings: &Bindings,
        manipulation: ManipulationMode,
    ) -> Result<(), ExecError> {
        for effect in &skill.effects {
            let args = effect
                .args
                .iter()
                .map(|a| self.predicate_arg(a, bindings))
                .collect::<Result<Vec<_>, _>>()?;
            match effect.predicate {
                PredicateSymbol::At => match &args[0] {
                    Binding::Entity(id) if id == "robot" => {
                        let dest = self
                            .destination(scene, &args[1])
                            .ok_or_else(|| unbound(effect.to_string()))?;
                        let goal = self.binding_position(scene, &args[1]).unwrap_or(dest);
                        let from = scene.robot.position;
                        if goal != from {
                            scene.robot.heading = wrap_angle((goal.y - from.y).atan2(goal.x - from.x));
                        }
                        scene.robot.position = dest;
                        let carried: Vec<String> = [&scene.robot.left_hand, &scene.robot.right_hand]
                            .iter()
                            .filter_map(|h| h.object().map(str::to_string))
                            .collect();
                        for id in carried {
                            if let Some(o) = scene.object_mut(&id) {
                                o.position = dest;
                            }
                        }
                    }
                    Binding::Entity(id) => {
                        let goal = self
                            .binding_position(scene, &args[1])
                            .ok_or_else(|| unbound(effect.to_string()))?;
                        let goal = scene.world_bounds.clamp(goal);
                        let obj = scene.object_mut(id).ok_or_else(|| unbound(id.clone()))?;
                        obj.position = goal;
                        obj.on_surface = None;
                    }
                    other => return Err(unbound(format!("{other:?}"))),
                },
                PredicateSymbol::Holding => {
                    let Binding::Entity(id) = &args[0] else {
                        return Err(unbound(effect.to_string()));
                    };
                    let robot_at = scene.robot.position;
                    let r = &mut scene.robot;
                    match manipulation {
                        ManipulationMode::SingleLeft => r.left_hand = HandState::Holding(id.clone()),
                        ManipulationMode::SingleRight => r.right_hand = HandState::Holding(id.clone()),
                        ManipulationMode::Dual => {
                            r.right_hand = HandState::Holding(id.clone());
                            r.left_hand = HandState::Assisting(id.clone());
                        }
                        ManipulationMode::None => return Err(unbound(effect.to_string())),
                    }
                    let obj = scene.object_mut(id).ok_or_else(|| unbound(id.clone()))?;
                    obj.on_surface = None;
                    obj.position = robot_at;
                }
                PredicateSymbol::FreeHand => {
                    scene.robot.left_hand = HandState::Free;
                    scene.robot.right_hand = HandState::Free;
                }
                PredicateSymbol::DoorOpen => {
                    let id = match &args[0] {
                        Binding::Entity(id) => id.clone(),
                        other => return Err(unbound(format!("{other:?}"))),
                    };
                    scene
                        .doors
                        .iter_mut()
                        .find(|d| d.id == id)
                        .ok_or_else(|| unbound(id))?
                        .open = true;
                }
                PredicateSymbol::OnSurface => {
                    let (Binding::Entity(id), Binding::Entity(surface)) = (&args[0], &args[1]) else {
                        return Err(unbound(effect.to_string()));
                    };
                    let at = scene.object(surface).ok_or_else(|| unbound(surface.clone()))?.position;
                    let obj = scene.object_mut(id).ok_or_else(|| unbound(id.clone()))?;
                    obj.position = at;
                    obj.on_surface = Some(surface.clone());
                }
                PredicateSymbol::BaseMode => {
                    let mode = match &args[0] {
                        Binding::Word(w) => w.parse::<LocomotionMode>().map_err(unbound)?,
                        other => return Err(unbound(format!("{other:?}"))),
                    };
                    scene.robot.base_mode = mode;
                }
            }
        }
        Ok(())
    }

    /// Executes one skill invocation.
    ///
    /// Precondition and capability checks run first and never consume
    /// randomness; a stochastic failure leaves the scene untouched apart
    /// from the perception offset of a misaligned target.
    pub fn execute_skill(
        &mut self,
        invocation: &Invocation,
        injection: &FailureInjection,
        library: &MotionLibrary,
    ) -> Result<SkillOutcome, ExecError> {
        let skill = library
            .get(&invocation.skill)
            .ok_or_else(|| ExecError::UnknownSkill(invocation.skill.clone()))?;
        let bindings = self.bind_args(skill, &invocation.args)?;
        let (manipulation, locomotion) = self.effective_morphology(skill, &bindings, invocation.morphology.as_ref())?;

        let mut next = self.scene.clone();
        next.robot.base_mode = locomotion;
        for pre in &skill.preconditions {
            let limit = if pre.predicate == PredicateSymbol::At && skill.manipulates() {
                self.config.reach
            } else {
                self.config.at_tolerance
            };
            if !self.evaluate_in(&next, pre, &bindings, limit)? {
                return Err(ExecError::PreconditionUnmet(pre.predicate));
            }
        }
        self.check_capabilities(&next, skill, &bindings, manipulation, locomotion)?;

        let slot = invocation.slot.clone().unwrap_or_else(|| skill.name.clone());
        let attempt = self.attempts.entry(slot.clone()).or_insert(0);
        let mut rng = injection.stream(self.run, &slot, *attempt);
        *attempt += 1;
        let p = injection
            .failure_prob
            .get(&skill.name)
            .copied()
            .or(injection.default_failure_prob)
            .unwrap_or(skill.failure_profile.base_failure_prob);
        let failed = rng.random::<f64>() < p;
        let targets: Vec<String> = skill
            .params
            .iter()
            .filter_map(|p| match bindings.get(&p.name) {
                Some(Binding::Entity(id)) if id != "robot" => Some(id.clone()),
                _ => None,
            })
            .collect();

        if failed {
            let category = pick_category(&injection.category_mix, rng.random::<f64>())
                .unwrap_or(skill.failure_profile.error_category);
            let mut delta = Vec::new();
            if category == ErrorCategory::PerceptionMisalignment {
                if let Some(target) = targets.first() {
                    self.perception_offsets
                        .insert(target.clone(), Point::new(injection.misalignment_bias, 0.0));
                    delta.push(format!("perception_offsets.{target}"));
                }
            }
            return Ok(SkillOutcome {
                status: SkillStatus::Failure,
                error_category: Some(category),
                ticks_elapsed: skill.nominal_duration,
                world_delta: delta,
            });
        }

        self.apply_effects(&mut next, skill, &bindings, manipulation)?;
        let mut delta = scene_delta(&self.scene, &next);
        for t in &targets {
            if self.perception_offsets.remove(t).is_some() {
                delta.push(format!("perception_offsets.{t}"));
            }
        }
        self.scene = next;
        Ok(SkillOutcome {
            status: SkillStatus::Success,
            error_category: None,
            ticks_elapsed: skill.nominal_duration,
            world_delta: delta,
        })
    }
}

fn default_manipulation(skill: &SkillPrimitive, bindings: &Bindings) -> ManipulationMode {
    if !skill.manipulates() {
        return ManipulationMode::None;
    }
    let requested = match bindings.get("arm") {
        Some(Binding::Word(w)) | Some(Binding::Entity(w)) => match w.as_str() {
            "left" => Some(ManipulationMode::SingleLeft),
            "right" => Some(ManipulationMode::SingleRight),
            "both" => Some(ManipulationMode::Dual),
            _ => None,
        },
        _ => None,
    };
    requested
        .into_iter()
        .chain([
            ManipulationMode::SingleRight,
            ManipulationMode::SingleLeft,
            ManipulationMode::Dual,
        ])
        .find(|m| skill.manipulation_modes.contains(m))
        .unwrap_or(ManipulationMode::None)
}

fn default_locomotion(skill: &SkillPrimitive, current: LocomotionMode) -> LocomotionMode {
    std::iter::once(current)
        .chain(LocomotionMode::ALL)
        .find(|m| skill.locomotion_modes.iter().any(|s| s.admits(*m)))
        .unwrap_or(current)
}

fn pick_category(mix: &BTreeMap<ErrorCategory, f64>, u: f64) -> Option<ErrorCategory> {
    let total: f64 = mix.values().sum();
    if mix.is_empty() || total <= 0.0 {
        return None;
    }
    let mut acc = 0.0;
    for (cat, w) in mix {
        acc += w / total;
        if u < acc {
            return Some(*cat);
        }
    }
    mix.iter().rev().find(|(_, w)| **w > 0.0).map(|(c, _)| *c)
}

fn scene_delta(before: &SceneSnapshot, after: &SceneSnapshot) -> Vec<String> {
    let mut out = Vec::new();
    let (a, b) = (&before.robot, &after.robot);
    if a.position != b.position {
        out.push("robot.position".to_string());
    }
    if a.heading != b.heading {
        out.push("robot.heading".to_string());
    }
    if a.base_mode != b.base_mode {
        out.push("robot.base_mode".to_string());
    }
    if a.left_hand != b.left_hand {
        out.push("robot.left_hand".to_string());
    }
    if a.right_hand != b.right_hand {
        out.push("robot.right_hand".to_string());
    }
    for (x, y) in before.objects.iter().zip(&after.objects) {
        if x.position != y.position {
            out.push(format!("objects.{}.position", x.id));
        }
        if x.on_surface != y.on_surface {
            out.push(format!("objects.{}.on_surface", x.id));
        }
    }
    for (x, y) in before.doors.iter().zip(&after.doors) {
        if x.open != y.open {
            out.push(format!("doors.{}.open", x.id));
        }
    }
    out
}

/// Free-function form of [`World::execute_skill`].
pub fn execute_skill(
    world: &mut World,
    invocation: &Invocation,
    injection: &FailureInjection,
    library: &MotionLibrary,
) -> Result<SkillOutcome, ExecError> {
    world.execute_skill(invocation, injection, library)
}

/// Free-function form of [`World::evaluate_predicate`].
pub fn evaluate_predicate(world: &World, predicate: &Predicate, bindings: &Bindings) -> Result<bool, ExecError> {
    world.evaluate_predicate(predicate, bindings)
}
