use super::{ChoiceSource, GeometricFeatures, MorphologyChoice, SelectionError, Thresholds};
use crate::modes::{LocomotionMode, ManipulationMode};
use crate::motion_library::SkillPrimitive;
use crate::sim::scene::TerrainClass;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManipulationDecision {
    pub mode: ManipulationMode,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocomotionDecision {
    pub mode: LocomotionMode,
    pub rationale: String,
}

/// Whether the object is beyond a single arm (span or payload). Values
/// exactly at a threshold count as beyond.
pub(crate) fn needs_dual(features: &GeometricFeatures, t: &Thresholds) -> bool {
    features.object_width >= t.grasp_span || features.object_mass_est >= t.single_arm_payload
}

/// Whether the route needs legs. A step exactly at the wheel limit counts.
pub(crate) fn needs_legs(features: &GeometricFeatures, t: &Thresholds) -> bool {
    features.max_step_height >= t.wheel_step_limit || features.terrain_class != TerrainClass::Flat
}

pub(crate) fn route_infeasibility(features: &GeometricFeatures, t: &Thresholds) -> Option<String> {
    if features.min_passage_width < t.chassis_width {
        return Some(format!(
            "passage {:.3} m is narrower than the {:.3} m chassis",
            features.min_passage_width, t.chassis_width
        ));
    }
    if features.max_step_height > t.leg_step_limit {
        return Some(format!(
            "step {:.3} m exceeds the {:.3} m leg limit",
            features.max_step_height, t.leg_step_limit
        ));
    }
    None
}

pub fn select_manipulation(
    features: &GeometricFeatures,
    skill: &SkillPrimitive,
    thresholds: &Thresholds,
) -> Result<ManipulationDecision, SelectionError> {
    if !skill.manipulates() {
        return Ok(ManipulationDecision {
            mode: ManipulationMode::None,
            rationale: format!("`{}` uses no hands", skill.name),
        });
    }
    let (preference, reason) = if needs_dual(features, thresholds) {
        (
            vec![ManipulationMode::Dual],
            format!(
                "object {:.3} m / {:.2} kg is beyond one arm (span {:.3} m, payload {:.2} kg)",
                features.object_width, features.object_mass_est, thresholds.grasp_span, thresholds.single_arm_payload
            ),
        )
    } else {
        let (near, far) = if features.object_bearing > 0.0 {
            (ManipulationMode::SingleLeft, ManipulationMode::SingleRight)
        } else {
            (ManipulationMode::SingleRight, ManipulationMode::SingleLeft)
        };
        (
            vec![near, far, ManipulationMode::Dual],
            format!("bearing {:+.3} rad favours {near}", features.object_bearing),
        )
    };
    preference
        .iter()
        .find(|m| skill.manipulation_modes.contains(m))
        .map(|&mode| ManipulationDecision {
            mode,
            rationale: if mode == preference[0] {
                reason.clone()
            } else {
                format!("{reason}; `{}` lacks it, using {mode}", skill.name)
            },
        })
        .ok_or_else(|| SelectionError::NoFeasibleMode {
            skill: skill.name.clone(),
            reason,
        })
}

pub fn select_locomotion(
    features: &GeometricFeatures,
    skill: &SkillPrimitive,
    thresholds: &Thresholds,
) -> Result<LocomotionDecision, SelectionError> {
    if let Some(reason) = route_infeasibility(features, thresholds) {
        return Err(SelectionError::InfeasibleRoute(reason));
    }
    let (preference, reason) = if needs_legs(features, thresholds) {
        (
            vec![LocomotionMode::Legged],
            format!(
                "step {:.3} m on {:?} terrain needs legs (wheel limit {:.3} m)",
                features.max_step_height, features.terrain_class, thresholds.wheel_step_limit
            ),
        )
    } else {
        (
            vec![LocomotionMode::Wheeled, LocomotionMode::Legged],
            format!("flat route, step {:.3} m: wheels suffice", features.max_step_height),
        )
    };
    preference
        .iter()
        .find(|m| skill.locomotion_modes.iter().any(|s| s.admits(**m)))
        .map(|&mode| LocomotionDecision {
            mode,
            rationale: if mode == preference[0] {
                reason.clone()
            } else {
                format!("{reason}; `{}` lacks wheeled, using {mode}", skill.name)
            },
        })
        .ok_or_else(|| SelectionError::NoFeasibleMode {
            skill: skill.name.clone(),
            reason,
        })
}

/// Rule-based choice of both modes.
pub fn select_morphology(
    features: &GeometricFeatures,
    skill: &SkillPrimitive,
    thresholds: &Thresholds,
) -> Result<MorphologyChoice, SelectionError> {
    let loco = select_locomotion(features, skill, thresholds)?;
    let manip = select_manipulation(features, skill, thresholds)?;
    Ok(MorphologyChoice {
        manipulation: manip.mode,
        locomotion: loco.mode,
        source: ChoiceSource::Rule,
        rationale: format!("{}; {}", manip.rationale, loco.rationale),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion_library::MotionLibrary;

    fn grasp() -> SkillPrimitive {
        MotionLibrary::default_library().get("grasp_object").unwrap().clone()
    }

    #[test]
    fn manipulation_examples() {
        let t = Thresholds::default();
        let wide = GeometricFeatures::simple(0.8, 1.0, 0.0);
        assert_eq!(
            select_manipulation(&wide, &grasp(), &t).unwrap().mode,
            ManipulationMode::Dual
        );
        let small = GeometricFeatures::simple(0.1, 0.5, 0.3);
        assert_eq!(
            select_manipulation(&small, &grasp(), &t).unwrap().mode,
            ManipulationMode::SingleLeft
        );
        let right = GeometricFeatures::simple(0.1, 0.5, -0.3);
        assert_eq!(
            select_manipulation(&right, &grasp(), &t).unwrap().mode,
            ManipulationMode::SingleRight
        );

        let mut only_right = grasp();
        only_right.manipulation_modes = [ManipulationMode::SingleRight].into();
        let heavy = GeometricFeatures::simple(0.1, 9.0, 0.0);
        assert!(matches!(
            select_manipulation(&heavy, &only_right, &t),
            Err(SelectionError::NoFeasibleMode { .. })
        ));
    }

    #[test]
    fn ties_resolve_conservatively() {
        let t = Thresholds::default();
        let at_span = GeometricFeatures::simple(0.45, 1.0, 0.2);
        assert_eq!(
            select_manipulation(&at_span, &grasp(), &t).unwrap().mode,
            ManipulationMode::Dual
        );
        let at_payload = GeometricFeatures::simple(0.1, 6.0, 0.2);
        assert_eq!(
            select_manipulation(&at_payload, &grasp(), &t).unwrap().mode,
            ManipulationMode::Dual
        );
        let mut at_step = GeometricFeatures::simple(0.1, 1.0, 0.0);
        at_step.max_step_height = 0.05;
        assert_eq!(
            select_locomotion(&at_step, &grasp(), &t).unwrap().mode,
            LocomotionMode::Legged
        );
        at_step.min_passage_width = 0.7;
        at_step.max_step_height = 0.25;
        assert_eq!(
            select_locomotion(&at_step, &grasp(), &t).unwrap().mode,
            LocomotionMode::Legged
        );
    }

    #[test]
    fn locomotion_examples() {
        let t = Thresholds::default();
        let mut f = GeometricFeatures::simple(0.1, 1.0, 0.0);
        assert_eq!(
            select_locomotion(&f, &grasp(), &t).unwrap().mode,
            LocomotionMode::Wheeled
        );
        f.max_step_height = 0.15;
        assert_eq!(
            select_locomotion(&f, &grasp(), &t).unwrap().mode,
            LocomotionMode::Legged
        );
        f.max_step_height = 0.0;
        f.terrain_class = TerrainClass::Rough;
        assert_eq!(
            select_locomotion(&f, &grasp(), &t).unwrap().mode,
            LocomotionMode::Legged
        );
        f.min_passage_width = 0.5;
        assert!(matches!(
            select_locomotion(&f, &grasp(), &t),
            Err(SelectionError::InfeasibleRoute(_))
        ));
    }

    #[test]
    fn skill_support_restricts_locomotion() {
        let t = Thresholds::default();
        let lib = MotionLibrary::default_library();
        let climb = lib.get("climb_step").unwrap();
        let flat = GeometricFeatures::simple(0.1, 1.0, 0.0);
        assert_eq!(
            select_locomotion(&flat, climb, &t).unwrap().mode,
            LocomotionMode::Legged
        );
        let choice = select_morphology(&flat, lib.get("navigate_to").unwrap(), &t).unwrap();
        assert_eq!(choice.manipulation, ManipulationMode::None);
        assert_eq!(choice.locomotion, LocomotionMode::Wheeled);
        assert_eq!(choice.source, ChoiceSource::Rule);
    }
}
