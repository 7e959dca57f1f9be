//! Morphology selection: distill a scene into geometric features, then
//! choose manipulation mode (single/dual arm) and locomotion mode
//! (wheeled/legged) by threshold rules, optionally consulting a
//! vision-language model whose answer the rules can veto.

mod config;
mod distill;
mod rules;
mod vlm;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modes::{LocomotionMode, ManipulationMode};
use crate::sim::scene::{Point, TerrainClass};

pub use config::{Thresholds, THRESHOLDS_FORMAT_VERSION};
pub use distill::{distill_features, occupancy_grid, FeatureError};
pub(crate) use distill::{doors_crossed, min_passage_width, route_exclusions, route_terrain, wrap_angle};
pub(crate) use rules::{needs_dual, needs_legs, route_infeasibility};
pub use rules::{select_locomotion, select_manipulation, select_morphology, LocomotionDecision, ManipulationDecision};
pub use vlm::{parse_vlm_answer, render_view, vlm_prompt, vlm_select};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceSource {
    Rule,
    Vlm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MorphologyChoice {
    pub manipulation: ManipulationMode,
    pub locomotion: LocomotionMode,
    pub source: ChoiceSource,
    pub rationale: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SelectionError {
    #[error("no mode supported by skill `{skill}` is feasible: {reason}")]
    NoFeasibleMode { skill: String, reason: String },
    #[error("route is infeasible: {0}")]
    InfeasibleRoute(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    Free,
    Occupied,
    Unknown,
}

/// Top-down occupancy raster. Cell `(col, row)` covers
/// `[origin.x + col·s, origin.x + (col+1)·s] × [origin.y + row·s, …]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub cols: usize,
    pub rows: usize,
    pub cell_size: f64,
    pub origin: Point,
    pub cells: Vec<Occupancy>,
    /// Cell holding the selection target, drawn as a marker in renders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_cell: Option<(usize, usize)>,
}

impl OccupancyGrid {
    pub fn get(&self, col: usize, row: usize) -> Occupancy {
        self.cells[row * self.cols + col]
    }

    pub fn occupied_cells(&self) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|r| (0..self.cols).map(move |c| (c, r)))
            .filter(|&(c, r)| self.get(c, r) == Occupancy::Occupied)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricFeatures {
    pub object_width: f64,
    pub object_depth: f64,
    pub object_height: f64,
    pub object_mass_est: f64,
    pub object_distance: f64,
    /// Target bearing relative to robot heading, in (−π, π].
    pub object_bearing: f64,
    pub min_passage_width: f64,
    pub max_step_height: f64,
    pub terrain_class: TerrainClass,
    pub occupancy_2d: OccupancyGrid,
}

impl GeometricFeatures {
    /// Multiplies every length-valued feature by `k`.
    pub fn scaled_lengths(&self, k: f64) -> Self {
        GeometricFeatures {
            object_width: self.object_width * k,
            object_depth: self.object_depth * k,
            object_height: self.object_height * k,
            object_distance: self.object_distance * k,
            min_passage_width: self.min_passage_width * k,
            max_step_height: self.max_step_height * k,
            occupancy_2d: OccupancyGrid {
                cell_size: self.occupancy_2d.cell_size * k,
                origin: Point::new(self.occupancy_2d.origin.x * k, self.occupancy_2d.origin.y * k),
                ..self.occupancy_2d.clone()
            },
            ..self.clone()
        }
    }

    /// Features for a direct query with no scene behind them.
    pub fn simple(width: f64, mass: f64, bearing: f64) -> Self {
        GeometricFeatures {
            object_width: width,
            object_depth: width,
            object_height: width,
            object_mass_est: mass,
            object_distance: 1.0,
            object_bearing: bearing,
            min_passage_width: 2.0,
            max_step_height: 0.0,
            terrain_class: TerrainClass::Flat,
            occupancy_2d: OccupancyGrid {
                cols: 1,
                rows: 1,
                cell_size: 1.0,
                origin: Point::new(0.0, 0.0),
                cells: vec![Occupancy::Free],
                target_cell: None,
            },
        }
    }
}

impl fmt::Display for GeometricFeatures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "object {:.3}×{:.3}×{:.3} m, {:.2} kg, distance {:.3} m, bearing {:.3} rad; \
             route: min passage {:.3} m, max step {:.3} m, terrain {:?}; grid {}×{} @ {} m",
            self.object_width,
            self.object_depth,
            self.object_height,
            self.object_mass_est,
            self.object_distance,
            self.object_bearing,
            self.min_passage_width,
            self.max_step_height,
            self.terrain_class,
            self.occupancy_2d.cols,
            self.occupancy_2d.rows,
            self.occupancy_2d.cell_size
        )
    }
}
