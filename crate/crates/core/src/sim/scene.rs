use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modes::LocomotionMode;

pub const SCENE_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scene format version {found} is not supported (expected {SCENE_FORMAT_VERSION})")]
    FormatVersionMismatch { found: String },
    #[error("invariant violated at `{path}`: {reason}")]
    InvariantViolation { path: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

fn violation(path: impl Into<String>, reason: impl Into<String>) -> SceneError {
    SceneError::InvariantViolation {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Planar point in meters, serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn new(min: Point, max: Point) -> Self {
        Bounds { min, max }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }
}

/// Axis-aligned box extents in meters, serialized as `[w, d, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct BoxSize {
    pub width: f64,
    pub depth: f64,
    pub height: f64,
}

impl From<[f64; 3]> for BoxSize {
    fn from([width, depth, height]: [f64; 3]) -> Self {
        BoxSize { width, depth, height }
    }
}

impl From<BoxSize> for [f64; 3] {
    fn from(b: BoxSize) -> Self {
        [b.width, b.depth, b.height]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandState {
    #[default]
    Free,
    Holding(String),
    /// Supporting an object gripped by the other hand (dual-arm carry).
    Assisting(String),
}

impl HandState {
    pub fn is_free(&self) -> bool {
        matches!(self, HandState::Free)
    }

    pub fn object(&self) -> Option<&str> {
        match self {
            HandState::Free => None,
            HandState::Holding(o) | HandState::Assisting(o) => Some(o),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: Point,
    #[serde(default)]
    pub heading: f64,
    #[serde(default = "default_base_mode")]
    pub base_mode: LocomotionMode,
    #[serde(default)]
    pub left_hand: HandState,
    #[serde(default)]
    pub right_hand: HandState,
}

fn default_base_mode() -> LocomotionMode {
    LocomotionMode::Wheeled
}

impl RobotState {
    pub fn is_carrying(&self, object: &str) -> bool {
        self.left_hand.object() == Some(object) || self.right_hand.object() == Some(object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub position: Point,
    pub bbox: BoxSize,
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_surface: Option<String>,
}

impl SceneObject {
    /// Top-down footprint as `(min, max)` corners.
    pub fn footprint(&self) -> (Point, Point) {
        let hw = self.bbox.width / 2.0;
        let hd = self.bbox.depth / 2.0;
        (
            Point::new(self.position.x - hw, self.position.y - hd),
            Point::new(self.position.x + hw, self.position.y + hd),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerrainClass {
    #[default]
    Flat,
    Steps,
    Rough,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TerrainCell {
    pub elevation: f64,
    #[serde(default)]
    pub class: TerrainClass,
}

/// Row-major elevation grid anchored at the world's minimum corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub cell_size: f64,
    pub cols: usize,
    pub rows: usize,
    pub cells: Vec<TerrainCell>,
}

impl Terrain {
    pub fn cell_index(&self, origin: Point, p: Point) -> Option<(usize, usize)> {
        let c = ((p.x - origin.x) / self.cell_size).floor();
        let r = ((p.y - origin.y) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 {
            return None;
        }
        let (c, r) = (c as usize, r as usize);
        // Points on the far world edge fall into the last cell.
        let c = if c == self.cols { c - 1 } else { c };
        let r = if r == self.rows { r - 1 } else { r };
        (c < self.cols && r < self.rows).then_some((c, r))
    }

    pub fn cell(&self, col: usize, row: usize) -> TerrainCell {
        self.cells[row * self.cols + col]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Door {
    pub id: String,
    pub position: Point,
    #[serde(default)]
    pub open: bool,
    #[serde(default = "default_door_width")]
    pub width: f64,
}

fn default_door_width() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub world_bounds: Bounds,
    pub robot: RobotState,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terrain: Option<Terrain>,
    #[serde(default)]
    pub doors: Vec<Door>,
}

#[derive(Serialize, Deserialize)]
struct SceneDocument {
    format_version: u64,
    #[serde(flatten)]
    scene: SceneSnapshot,
}

impl SceneSnapshot {
    /// A robot alone in a `width × height` world anchored at the origin.
    pub fn empty(width: f64, height: f64, robot_at: Point) -> Self {
        SceneSnapshot {
            world_bounds: Bounds::new(Point::new(0.0, 0.0), Point::new(width, height)),
            robot: RobotState {
                position: robot_at,
                heading: 0.0,
                base_mode: LocomotionMode::Wheeled,
                left_hand: HandState::Free,
                right_hand: HandState::Free,
            },
            objects: Vec::new(),
            terrain: None,
            doors: Vec::new(),
        }
    }

    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: &str) -> Option<&mut SceneObject> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    pub fn door(&self, id: &str) -> Option<&Door> {
        self.doors.iter().find(|d| d.id == id)
    }

    /// Position of the robot (`"robot"`), an object or a door.
    pub fn entity_position(&self, id: &str) -> Option<Point> {
        if id == "robot" {
            return Some(self.robot.position);
        }
        self.object(id)
            .map(|o| o.position)
            .or_else(|| self.door(id).map(|d| d.position))
    }

    pub fn terrain_at(&self, p: Point) -> TerrainCell {
        self.terrain
            .as_ref()
            .and_then(|t| t.cell_index(self.world_bounds.min, p).map(|(c, r)| t.cell(c, r)))
            .unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let b = &self.world_bounds;
        if !(b.min.is_finite() && b.max.is_finite()) || b.min.x >= b.max.x || b.min.y >= b.max.y {
            return Err(violation("world_bounds", "min must be strictly below max"));
        }
        let r = &self.robot;
        if !r.position.is_finite() || !b.contains(r.position) {
            return Err(violation("robot.position", "robot is outside world_bounds"));
        }
        if !r.heading.is_finite() {
            return Err(violation("robot.heading", "heading must be finite"));
        }

        let mut ids = BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            let path = format!("objects[{i}]");
            if o.id.trim().is_empty() || o.id == "robot" {
                return Err(violation(
                    format!("{path}.id"),
                    "object ids must be non-empty and not `robot`",
                ));
            }
            if !ids.insert(o.id.as_str()) {
                return Err(violation(format!("{path}.id"), format!("duplicate id `{}`", o.id)));
            }
            if !o.position.is_finite() || !b.contains(o.position) {
                return Err(violation(format!("{path}.position"), "object is outside world_bounds"));
            }
            let bb = [o.bbox.width, o.bbox.depth, o.bbox.height];
            if bb.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(violation(
                    format!("{path}.bbox"),
                    "extents must be finite and non-negative",
                ));
            }
            if !o.mass.is_finite() || o.mass < 0.0 {
                return Err(violation(
                    format!("{path}.mass"),
                    "mass must be finite and non-negative",
                ));
            }
        }
        for (i, d) in self.doors.iter().enumerate() {
            let path = format!("doors[{i}]");
            if d.id.trim().is_empty() || !ids.insert(d.id.as_str()) || d.id == "robot" {
                return Err(violation(
                    format!("{path}.id"),
                    format!("door id `{}` is empty or not unique", d.id),
                ));
            }
            if !d.position.is_finite() || !b.contains(d.position) {
                return Err(violation(format!("{path}.position"), "door is outside world_bounds"));
            }
            if !d.width.is_finite() || d.width < 0.0 {
                return Err(violation(format!("{path}.width"), "width must be non-negative"));
            }
        }
        for (i, o) in self.objects.iter().enumerate() {
            if let Some(s) = &o.on_surface {
                if s == &o.id || self.object(s).is_none() {
                    return Err(violation(
                        format!("objects[{i}].on_surface"),
                        format!("surface `{s}` is not another object"),
                    ));
                }
                if r.is_carrying(&o.id) {
                    return Err(violation(
                        format!("objects[{i}].on_surface"),
                        "a held object cannot rest on a surface",
                    ));
                }
            }
        }
        for (path, hand) in [("robot.left_hand", &r.left_hand), ("robot.right_hand", &r.right_hand)] {
            if let Some(obj) = hand.object() {
                if self.object(obj).is_none() {
                    return Err(violation(path, format!("holds unknown object `{obj}`")));
                }
            }
        }
        if let (HandState::Holding(a), HandState::Holding(b)) = (&r.left_hand, &r.right_hand) {
            if a == b {
                return Err(violation("robot.right_hand", "an object is held by at most one hand"));
            }
        }
        if let Some(t) = &self.terrain {
            if !(t.cell_size.is_finite() && t.cell_size > 0.0) {
                return Err(violation("terrain.cell_size", "must be positive"));
            }
            if t.cols == 0 || t.rows == 0 || t.cells.len() != t.cols * t.rows {
                return Err(violation("terrain.cells", "expected cols × rows cells"));
            }
            if t.cells.iter().any(|c| !c.elevation.is_finite()) {
                return Err(violation("terrain.cells", "elevations must be finite"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = SceneDocument {
            format_version: SCENE_FORMAT_VERSION,
            scene: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("scene serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        fs::write(path, self.to_json()).map_err(|e| SceneError::Io(e.to_string()))
    }
}

/// Parses and validates a scene document.
pub fn load_scene(document: &str) -> Result<SceneSnapshot, SceneError> {
    let value: serde_json::Value = serde_json::from_str(document).map_err(parse_error)?;
    match value.get("format_version") {
        Some(v) if v.as_u64() == Some(SCENE_FORMAT_VERSION) => {}
        Some(serde_json::Value::String(s)) => return Err(SceneError::FormatVersionMismatch { found: s.clone() }),
        Some(v) => return Err(SceneError::FormatVersionMismatch { found: v.to_string() }),
        None => {
            return Err(SceneError::FormatVersionMismatch {
                found: "missing".into(),
            })
        }
    }
    let doc: SceneDocument = serde_json::from_str(document).map_err(parse_error)?;
    doc.scene.validate()?;
    Ok(doc.scene)
}

pub fn load_scene_file(path: &Path) -> Result<SceneSnapshot, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::Io(e.to_string()))?;
    load_scene(&text)
}

fn parse_error(e: serde_json::Error) -> SceneError {
    SceneError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}
