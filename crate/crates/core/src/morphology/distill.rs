use std::f64::consts::PI;

use thiserror::Error;

use super::{GeometricFeatures, Occupancy, OccupancyGrid, Thresholds};
use crate::sim::scene::{Door, Point, SceneObject, SceneSnapshot, TerrainClass};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FeatureError {
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("route waypoint ({}, {}) is outside the world bounds", .0.x, .0.y)]
    RouteOutOfBounds(Point),
}

const PASSAGE_SAMPLE_STEP: f64 = 0.05;

/// Top-down projection of every object not carried by the robot onto a
/// grid covering the world bounds. A cell is occupied when a footprint
/// overlaps it with positive area; cells whose centre lies outside the
/// world are unknown.
pub fn occupancy_grid(scene: &SceneSnapshot, cell_size: f64) -> OccupancyGrid {
    let b = scene.world_bounds;
    let cols = ((b.width() / cell_size).ceil() as usize).max(1);
    let rows = ((b.height() / cell_size).ceil() as usize).max(1);
    let origin = b.min;
    let edge_x = |c: usize| origin.x + c as f64 * cell_size;
    let edge_y = |r: usize| origin.y + r as f64 * cell_size;

    let mut cells = vec![Occupancy::Free; cols * rows];
    for r in 0..rows {
        for c in 0..cols {
            let centre = Point::new(edge_x(c) + cell_size / 2.0, edge_y(r) + cell_size / 2.0);
            if !b.contains(centre) {
                cells[r * cols + c] = Occupancy::Unknown;
            }
        }
    }

    for obj in scene.objects.iter().filter(|o| !scene.robot.is_carrying(&o.id)) {
        let (lo, hi) = obj.footprint();
        // Candidate index range, widened by one cell so rounding in the
        // division never drops a boundary cell; the exact overlap test
        // below decides.
        let range = |lo: f64, hi: f64, o: f64, n: usize| {
            let a = ((lo - o) / cell_size).floor() - 1.0;
            let z = ((hi - o) / cell_size).ceil() + 1.0;
            let a = a.max(0.0) as usize;
            let z = (z.max(0.0) as usize).min(n);
            a..z
        };
        for r in range(lo.y, hi.y, origin.y, rows) {
            if hi.y.min(edge_y(r + 1)) - lo.y.max(edge_y(r)) <= 0.0 {
                continue;
            }
            for c in range(lo.x, hi.x, origin.x, cols) {
                if hi.x.min(edge_x(c + 1)) - lo.x.max(edge_x(c)) > 0.0 {
                    let cell = &mut cells[r * cols + c];
                    if *cell == Occupancy::Free {
                        *cell = Occupancy::Occupied;
                    }
                }
            }
        }
    }

    OccupancyGrid {
        cols,
        rows,
        cell_size,
        origin,
        cells,
        target_cell: None,
    }
}

/// Normalizes an angle into (−π, π].
pub(crate) fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Distills the scene into the features the rule engine consumes.
///
/// `target` names an object or a door. `route` lists waypoints from the
/// robot toward the target; an empty route means the straight line from
/// the robot to the target.
pub fn distill_features(
    scene: &SceneSnapshot,
    target: &str,
    route: &[Point],
    thresholds: &Thresholds,
) -> Result<GeometricFeatures, FeatureError> {
    let (position, size, mass) = if let Some(o) = scene.object(target) {
        (o.position, [o.bbox.width, o.bbox.depth, o.bbox.height], o.mass)
    } else if let Some(d) = scene.door(target) {
        (d.position, [d.width, 0.05, 2.0], 0.0)
    } else {
        return Err(FeatureError::UnknownObject(target.to_string()));
    };

    let route: Vec<Point> = match route.len() {
        0 => vec![scene.robot.position, position],
        1 => vec![scene.robot.position, route[0]],
        _ => route.to_vec(),
    };
    if let Some(p) = route.iter().find(|p| !scene.world_bounds.contains(**p)) {
        return Err(FeatureError::RouteOutOfBounds(*p));
    }

    let robot = scene.robot.position;
    let dx = position.x - robot.x;
    let dy = position.y - robot.y;
    let bearing = if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        wrap_angle(dy.atan2(dx) - scene.robot.heading)
    };

    let (max_step_height, terrain_class) = route_terrain(scene, &route);
    let mut occupancy = occupancy_grid(scene, thresholds.occupancy_cell_size);
    occupancy.target_cell = grid_cell(&occupancy, position);

    Ok(GeometricFeatures {
        object_width: size[0],
        object_depth: size[1],
        object_height: size[2],
        object_mass_est: mass,
        object_distance: robot.distance(position),
        object_bearing: bearing,
        min_passage_width: min_passage_width(scene, &route_exclusions(scene, &[target]), &route, thresholds),
        max_step_height,
        terrain_class,
        occupancy_2d: occupancy,
    })
}

fn grid_cell(grid: &OccupancyGrid, p: Point) -> Option<(usize, usize)> {
    let c = ((p.x - grid.origin.x) / grid.cell_size).floor();
    let r = ((p.y - grid.origin.y) / grid.cell_size).floor();
    if c < 0.0 || r < 0.0 {
        return None;
    }
    let (c, r) = ((c as usize).min(grid.cols - 1), (r as usize).min(grid.rows - 1));
    Some((c, r))
}

fn samples(route: &[Point], step: f64) -> Vec<(Point, Option<(f64, f64)>)> {
    let mut out = Vec::new();
    for seg in route.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = a.distance(b);
        if len == 0.0 {
            out.push((a, None));
            continue;
        }
        let dir = ((b.x - a.x) / len, (b.y - a.y) / len);
        let n = (len / step).ceil().max(1.0) as usize;
        for i in 0..=n {
            let t = (i as f64 / n as f64) * len;
            out.push((Point::new(a.x + dir.0 * t, a.y + dir.1 * t), Some(dir)));
        }
    }
    out
}

pub(crate) fn route_terrain(scene: &SceneSnapshot, route: &[Point]) -> (f64, TerrainClass) {
    let Some(terrain) = &scene.terrain else {
        return (0.0, TerrainClass::Flat);
    };
    let origin = scene.world_bounds.min;
    let mut max_step: f64 = 0.0;
    let mut class = TerrainClass::Flat;
    let mut prev: Option<(usize, usize)> = None;
    for (p, _) in samples(route, terrain.cell_size / 4.0) {
        let Some(cell) = terrain.cell_index(origin, p) else {
            continue;
        };
        let here = terrain.cell(cell.0, cell.1);
        class = class.max(here.class);
        if let Some(prev_cell) = prev.filter(|pc| *pc != cell) {
            let before = terrain.cell(prev_cell.0, prev_cell.1);
            max_step = max_step.max((here.elevation - before.elevation).abs());
        }
        prev = Some(cell);
    }
    (max_step, class)
}

/// Distance along the ray `p + t·dir` (t ≥ 0) to the footprint, if hit.
fn ray_box(p: Point, dir: (f64, f64), lo: Point, hi: Point) -> Option<f64> {
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for (o, d, l, h) in [(p.x, dir.0, lo.x, hi.x), (p.y, dir.1, lo.y, hi.y)] {
        if d.abs() < 1e-12 {
            if o < l || o > h {
                return None;
            }
        } else {
            let t1 = (l - o) / d;
            let t2 = (h - o) / d;
            t_min = t_min.max(t1.min(t2));
            t_max = t_max.min(t1.max(t2));
        }
    }
    (t_max >= t_min.max(0.0)).then_some(t_min.max(0.0))
}

fn distance_to_bounds(scene: &SceneSnapshot, p: Point, dir: (f64, f64)) -> f64 {
    let b = scene.world_bounds;
    let mut t = f64::INFINITY;
    if dir.0 > 1e-12 {
        t = t.min((b.max.x - p.x) / dir.0);
    } else if dir.0 < -1e-12 {
        t = t.min((b.min.x - p.x) / dir.0);
    }
    if dir.1 > 1e-12 {
        t = t.min((b.max.y - p.y) / dir.1);
    } else if dir.1 < -1e-12 {
        t = t.min((b.min.y - p.y) / dir.1);
    }
    t.max(0.0)
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = (((p.x - a.x) * vx + (p.y - a.y) * vy) / len2).clamp(0.0, 1.0);
    p.distance(Point::new(a.x + t * vx, a.y + t * vy))
}

/// Ids ignored when measuring a route toward `targets`: the targets, the
/// surfaces they rest on, and whatever rests on them.
pub(crate) fn route_exclusions(scene: &SceneSnapshot, targets: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = targets.iter().map(|t| t.to_string()).collect();
    for t in targets {
        if let Some(s) = scene.object(t).and_then(|o| o.on_surface.clone()) {
            out.push(s);
        }
        out.extend(
            scene
                .objects
                .iter()
                .filter(|o| o.on_surface.as_deref() == Some(*t))
                .map(|o| o.id.clone()),
        );
    }
    out
}

/// Doors within the corridor of the route, skipping excluded ids.
pub(crate) fn doors_crossed<'a>(
    scene: &'a SceneSnapshot,
    exclude: &[String],
    route: &[Point],
    thresholds: &Thresholds,
) -> Vec<&'a Door> {
    scene
        .doors
        .iter()
        .filter(|d| !exclude.contains(&d.id))
        .filter(|d| {
            route
                .windows(2)
                .any(|s| point_segment_distance(d.position, s[0], s[1]) <= thresholds.door_corridor)
        })
        .collect()
}

/// Narrowest free span across the route: at each sample, obstacle-free
/// distance to the left plus to the right (each capped at the probe
/// length), further limited by doors the route passes through.
pub(crate) fn min_passage_width(
    scene: &SceneSnapshot,
    exclude: &[String],
    route: &[Point],
    thresholds: &Thresholds,
) -> f64 {
    let obstacles: Vec<&SceneObject> = scene
        .objects
        .iter()
        .filter(|o| !exclude.contains(&o.id))
        .filter(|o| !scene.robot.is_carrying(&o.id))
        .collect();

    let probe = thresholds.passage_probe;
    let mut width = 2.0 * probe;
    for (p, dir) in samples(route, PASSAGE_SAMPLE_STEP) {
        let Some((dx, dy)) = dir else { continue };
        let mut span = 0.0;
        for normal in [(-dy, dx), (dy, -dx)] {
            let mut clear = probe.min(distance_to_bounds(scene, p, normal));
            for o in &obstacles {
                let (lo, hi) = o.footprint();
                if let Some(t) = ray_box(p, normal, lo, hi) {
                    clear = clear.min(t);
                }
            }
            span += clear;
        }
        width = width.min(span);
    }

    for door in doors_crossed(scene, exclude, route, thresholds) {
        width = width.min(if door.open { door.width } else { 0.0 });
    }
    width
}
