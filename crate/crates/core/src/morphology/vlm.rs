use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;

use super::rules::{needs_dual, needs_legs};
use super::{
    select_morphology, ChoiceSource, GeometricFeatures, MorphologyChoice, Occupancy, OccupancyGrid, SelectionError,
    Thresholds,
};
use crate::client::{Decoding, ModelClient};
use crate::modes::{LocomotionMode, ManipulationMode};
use crate::motion_library::SkillPrimitive;

const FREE: u8 = 255;
const OCCUPIED: u8 = 0;
const UNKNOWN: u8 = 128;
const TARGET: u8 = 64;

/// Rasterizes the grid as a binary greymap (PGM `P5`), one pixel per cell.
/// The first image row is the grid's top (largest y).
pub fn render_view(grid: &OccupancyGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.cols, grid.rows).into_bytes();
    for r in (0..grid.rows).rev() {
        for c in 0..grid.cols {
            let px = if grid.target_cell == Some((c, r)) {
                TARGET
            } else {
                match grid.get(c, r) {
                    Occupancy::Free => FREE,
                    Occupancy::Occupied => OCCUPIED,
                    Occupancy::Unknown => UNKNOWN,
                }
            };
            out.push(px);
        }
    }
    out
}

pub fn vlm_prompt(view: &[u8], features: &GeometricFeatures, task_state: &str, skill: &SkillPrimitive) -> String {
    format!(
        "You select the operating morphology of a wheeled-legged humanoid.\n\
         Skill: {}\n\
         Task state: {task_state}\n\
         Geometric features: {features}\n\
         Top-down occupancy view (PGM, base64; white free, black occupied, grey unknown, dark target):\n{}\n\
         Supported manipulation modes: {}\n\
         Supported locomotion modes: {}\n\
         Answer with one manipulation mode (single_left, single_right, dual, none) and one \
         locomotion mode (wheeled, legged), e.g. `dual, legged`.\n",
        skill.signature(),
        BASE64.encode(view),
        skill
            .manipulation_modes
            .iter()
            .map(|m| m.as_str())
            .collect::<Vec<_>>()
            .join(", "),
        skill
            .locomotion_modes
            .iter()
            .map(|m| m.as_str())
            .collect::<Vec<_>>()
            .join(", "),
    )
}

/// Extracts the first manipulation and first locomotion mode named in a
/// free-text answer.
pub fn parse_vlm_answer(answer: &str) -> Option<(ManipulationMode, LocomotionMode)> {
    let normalized = answer.to_ascii_lowercase().replace('-', "_");
    let words = normalized
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty());
    let mut manip = None;
    let mut loco = None;
    for w in words {
        if manip.is_none() {
            manip = w.parse::<ManipulationMode>().ok();
        }
        if loco.is_none() {
            loco = w.parse::<LocomotionMode>().ok();
        }
    }
    Some((manip?, loco?))
}

/// Asks the model for a morphology, falling back to the rules when the
/// answer is unusable. Route infeasibility is decided by the rules alone
/// and is the only error; the model may not pick a single arm for an
/// object beyond one arm, wheels where legs are needed, or a mode the
/// skill lacks.
pub fn vlm_select(
    view: &[u8],
    features: &GeometricFeatures,
    task_state: &str,
    skill: &SkillPrimitive,
    thresholds: &Thresholds,
    client: &dyn ModelClient,
) -> Result<MorphologyChoice, SelectionError> {
    let fallback = select_morphology(features, skill, thresholds)?;
    let prompt = vlm_prompt(view, features, task_state, skill);
    let answer = match client.complete(&prompt, &Decoding::default()) {
        Ok(a) => a,
        Err(e) => {
            return Ok(MorphologyChoice {
                rationale: format!("model unavailable ({e}); {}", fallback.rationale),
                ..fallback
            })
        }
    };
    let Some((manipulation, locomotion)) = parse_vlm_answer(&answer) else {
        return Ok(MorphologyChoice {
            rationale: format!("unparseable model answer; {}", fallback.rationale),
            ..fallback
        });
    };

    let veto = if !skill.manipulation_modes.contains(&manipulation) {
        Some(format!("`{}` does not support {manipulation}", skill.name))
    } else if !skill.locomotion_modes.iter().any(|s| s.admits(locomotion)) {
        Some(format!("`{}` does not support {locomotion}", skill.name))
    } else if skill.manipulates() && manipulation.is_single() && needs_dual(features, thresholds) {
        Some("object is beyond a single arm".to_string())
    } else if skill.manipulates() && manipulation == ManipulationMode::None {
        Some(format!("`{}` needs a hand", skill.name))
    } else if locomotion == LocomotionMode::Wheeled && needs_legs(features, thresholds) {
        Some("route needs legs".to_string())
    } else {
        None
    };
    Ok(match veto {
        Some(reason) => MorphologyChoice {
            rationale: format!(
                "model chose {manipulation}/{locomotion}, vetoed: {reason}; {}",
                fallback.rationale
            ),
            ..fallback
        },
        None => MorphologyChoice {
            manipulation,
            locomotion,
            source: ChoiceSource::Vlm,
            rationale: answer.trim().to_string(),
        },
    })
}
