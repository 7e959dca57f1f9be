//! Generators, oracles and per-case checks shared by the property tests
//! and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use proptest::prelude::*;

use locoplan_core::bt::scripted::{Scripted, ScriptedWorld};
use locoplan_core::bt::{run_to_completion, BehaviorTree, BtNode, RunStatus};
use locoplan_core::modes::{ErrorCategory, LocomotionMode, ManipulationMode};
use locoplan_core::morphology::{
    occupancy_grid, select_morphology, GeometricFeatures, Occupancy, SelectionError, Thresholds,
};
use locoplan_core::motion_library::SkillPrimitive;
use locoplan_core::sim::scene::{Point, SceneObject, SceneSnapshot, TerrainClass};
use locoplan_core::MotionLibrary;

// ---------- behavior trees ----------

pub fn bt_shape() -> impl Strategy<Value = BtNode> {
    let leaf = any::<u8>().prop_map(|_| BtNode::action("", "skill"));
    leaf.prop_recursive(4, 30, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(|c| BtNode::sequence("", c)),
            prop::collection::vec(inner.clone(), 1..4).prop_map(|c| BtNode::fallback("", c)),
            (1u32..4, inner.clone()).prop_map(|(n, c)| BtNode::retry("", c, n)),
            (inner.clone(), inner).prop_map(|(c, r)| BtNode::recovery("", c, r)),
        ]
    })
}

/// Assigns unique ids and records, for every action, the largest number of
/// activations its ancestors allow.
pub fn number(node: &mut BtNode, next: &mut usize, mult: u64, bounds: &mut BTreeMap<String, u64>) {
    let id = format!("b{next}");
    *next += 1;
    match node {
        BtNode::Action { id: slot, .. } => {
            *slot = id.clone();
            bounds.insert(id, mult);
        }
        BtNode::Sequence { id: slot, children } | BtNode::Fallback { id: slot, children } => {
            *slot = id;
            for c in children {
                number(c, next, mult, bounds);
            }
        }
        BtNode::Retry {
            id: slot,
            child,
            max_attempts,
        } => {
            *slot = id;
            number(child, next, mult * u64::from(*max_attempts), bounds);
        }
        BtNode::Recovery {
            id: slot,
            child,
            recovery,
        } => {
            *slot = id;
            number(child, next, mult * 2, bounds);
            number(recovery, next, mult, bounds);
        }
        BtNode::MorphologyGate { id: slot, child, .. } => {
            *slot = id;
            number(child, next, mult, bounds);
        }
        BtNode::Condition { id: slot, .. } => *slot = id,
    }
}

pub fn scripts() -> impl Strategy<Value = Vec<Vec<(bool, u64)>>> {
    prop::collection::vec(prop::collection::vec((any::<bool>(), 1u64..4), 1..5), 40)
}

pub fn scripted_world(bounds: &BTreeMap<String, u64>, scripts: &[Vec<(bool, u64)>]) -> ScriptedWorld {
    let mut w = ScriptedWorld::new();
    for (i, id) in bounds.keys().enumerate() {
        let outcomes = scripts[i % scripts.len()]
            .iter()
            .map(|&(ok, d)| {
                if ok {
                    Scripted::success(d)
                } else {
                    Scripted::failure(ErrorCategory::ExecutionDynamics, d)
                }
            })
            .collect();
        w = w.script_node(id, outcomes);
    }
    w
}

// ---------- morphology ----------

/// Scene coordinates are multiples of 1/16 m so the oracle can work in
/// exact integer sixteenths.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub cell16: i64,
    pub width16: i64,
    pub height16: i64,
    pub boxes: Vec<(i64, i64, i64, i64)>,
}

pub fn grid_case() -> impl Strategy<Value = GridCase> {
    (prop::sample::select(vec![4i64, 8, 16]), 1i64..=8, 1i64..=8)
        .prop_flat_map(|(cell16, cols, rows)| {
            // Widths that may leave a partial last column or row.
            let w = (cols - 1) * cell16 + 1..=cols * cell16;
            let h = (rows - 1) * cell16 + 1..=rows * cell16;
            (Just(cell16), w, h)
        })
        .prop_flat_map(|(cell16, w, h)| {
            let bx = (0..=w, 0..=h, 0i64..=24, 0i64..=24).prop_map(|(x, y, hw, hd)| (x, y, hw, hd));
            (Just(cell16), Just(w), Just(h), prop::collection::vec(bx, 0..=5))
        })
        .prop_map(|(cell16, width16, height16, boxes)| GridCase {
            cell16,
            width16,
            height16,
            boxes,
        })
}

pub fn oracle(case: &GridCase) -> (usize, usize, Vec<Occupancy>) {
    let cols = ((case.width16 + case.cell16 - 1) / case.cell16) as usize;
    let rows = ((case.height16 + case.cell16 - 1) / case.cell16) as usize;
    let mut cells = Vec::new();
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            let (x0, x1) = (c * case.cell16, (c + 1) * case.cell16);
            let (y0, y1) = (r * case.cell16, (r + 1) * case.cell16);
            // Centre outside the world, compared at double resolution.
            if (2 * c + 1) * case.cell16 > 2 * case.width16 || (2 * r + 1) * case.cell16 > 2 * case.height16 {
                cells.push(Occupancy::Unknown);
                continue;
            }
            let hit = case.boxes.iter().any(|&(x, y, hw, hd)| {
                let ox = (x + hw).min(x1) - (x - hw).max(x0);
                let oy = (y + hd).min(y1) - (y - hd).max(y0);
                ox > 0 && oy > 0
            });
            cells.push(if hit { Occupancy::Occupied } else { Occupancy::Free });
        }
    }
    (cols, rows, cells)
}

pub fn scene_of(case: &GridCase) -> SceneSnapshot {
    let s = |v: i64| v as f64 / 16.0;
    let mut scene = SceneSnapshot::empty(s(case.width16), s(case.height16), Point::new(0.0, 0.0));
    for (i, &(x, y, hw, hd)) in case.boxes.iter().enumerate() {
        scene.objects.push(SceneObject {
            id: format!("o{i}"),
            position: Point::new(s(x), s(y)),
            bbox: [s(2 * hw), s(2 * hd), 0.5].into(),
            mass: 1.0,
            on_surface: None,
        });
    }
    scene
}

pub fn features() -> impl Strategy<Value = GeometricFeatures> {
    (
        0.0f64..1.5,
        0.0f64..12.0,
        -PI..PI,
        0.0f64..3.0,
        0.0f64..0.4,
        prop::sample::select(vec![TerrainClass::Flat, TerrainClass::Steps, TerrainClass::Rough]),
    )
        .prop_map(|(w, m, b, passage, step, class)| GeometricFeatures {
            min_passage_width: passage,
            max_step_height: step,
            terrain_class: class,
            ..GeometricFeatures::simple(w, m, b)
        })
}

pub type Decision = Result<(ManipulationMode, LocomotionMode), &'static str>;

pub fn decide(f: &GeometricFeatures, skill: &SkillPrimitive, t: &Thresholds) -> Decision {
    match select_morphology(f, skill, t) {
        Ok(c) => Ok((c.manipulation, c.locomotion)),
        Err(SelectionError::InfeasibleRoute(_)) => Err("infeasible"),
        Err(SelectionError::NoFeasibleMode { .. }) => Err("no mode"),
    }
}

/// Every action is dispatched no more often than its ancestors allow, and
/// a replay is byte-identical.
pub fn check_retry_bound(mut root: BtNode, scripts: &[Vec<(bool, u64)>]) -> Result<(), TestCaseError> {
    let mut bounds = BTreeMap::new();
    number(&mut root, &mut 0, 1, &mut bounds);
    let tree = BehaviorTree::new(root);
    let mut world = scripted_world(&bounds, scripts);
    let result = run_to_completion(&tree, &mut world, 100_000);
    prop_assert!(matches!(result.status, RunStatus::Success | RunStatus::Failure));
    for (id, bound) in &bounds {
        prop_assert!(
            result.dispatches_of(id) as u64 <= *bound,
            "{id}: {} > {bound}",
            result.dispatches_of(id)
        );
    }
    prop_assert!(result.events.windows(2).all(|w| w[0].tick <= w[1].tick));
    prop_assert_eq!(result.status == RunStatus::Failure, !result.failure_causes.is_empty());
    let again = run_to_completion(&tree, &mut scripted_world(&bounds, scripts), 100_000);
    prop_assert_eq!(
        serde_json::to_string(&again).unwrap(),
        serde_json::to_string(&result).unwrap()
    );
    Ok(())
}

pub fn check_occupancy(case: &GridCase) -> Result<(), TestCaseError> {
    let grid = occupancy_grid(&scene_of(case), case.cell16 as f64 / 16.0);
    let (cols, rows, cells) = oracle(case);
    prop_assert_eq!((grid.cols, grid.rows), (cols, rows));
    prop_assert_eq!(grid.cells, cells);
    Ok(())
}

/// Growing the object never leaves dual-arm; raising the step never leaves
/// legs unless the route becomes impassable.
pub fn check_monotone(f: &GeometricFeatures, dw: f64, dm: f64, dstep: f64) -> Result<(), TestCaseError> {
    let lib = MotionLibrary::default_library();
    let t = Thresholds::default();
    let skill = lib.get("grasp_object").unwrap();
    let before = decide(f, skill, &t);
    let grown = GeometricFeatures {
        object_width: f.object_width + dw,
        object_mass_est: f.object_mass_est + dm,
        ..f.clone()
    };
    if let Ok((ManipulationMode::Dual, _)) = before {
        prop_assert!(matches!(decide(&grown, skill, &t), Ok((ManipulationMode::Dual, _))));
    }
    let nav = lib.get("navigate_to").unwrap();
    let higher = GeometricFeatures {
        max_step_height: f.max_step_height + dstep,
        ..f.clone()
    };
    if let (Ok((_, LocomotionMode::Legged)), Ok((_, l))) = (decide(f, nav, &t), decide(&higher, nav, &t)) {
        prop_assert_eq!(l, LocomotionMode::Legged);
    }
    prop_assert_eq!(decide(f, skill, &t), before);
    Ok(())
}

/// Scaling every length and length threshold by `k` keeps the decision.
pub fn check_scaling(f: &GeometricFeatures, k: f64) -> Result<(), TestCaseError> {
    let lib = MotionLibrary::default_library();
    let t = Thresholds::default();
    for name in ["grasp_object", "navigate_to", "open_door", "climb_step"] {
        let skill = lib.get(name).unwrap();
        prop_assert_eq!(
            decide(f, skill, &t),
            decide(&f.scaled_lengths(k), skill, &t.scaled_lengths(k)),
            "{}",
            name
        );
    }
    Ok(())
}
