use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const THRESHOLDS_FORMAT_VERSION: u32 = 1;

/// Affordance thresholds for the rule engine and feature distillation.
///
/// The defaults describe a CENTAURO-class wheeled-legged platform; they
/// are configuration, not measured constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub format_version: u32,
    /// Widest object one hand can grasp (m).
    pub grasp_span: f64,
    /// Heaviest object one arm can carry (kg).
    pub single_arm_payload: f64,
    /// Highest step the wheels can roll over (m).
    pub wheel_step_limit: f64,
    /// Highest step the legs can climb (m).
    pub leg_step_limit: f64,
    /// Narrowest passage the base fits through (m).
    pub chassis_width: f64,
    /// Occupancy grid resolution (m).
    pub occupancy_cell_size: f64,
    /// How far to probe sideways for obstacles when measuring passages (m).
    pub passage_probe: f64,
    /// Doors closer than this to the route count as crossed (m).
    pub door_corridor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            format_version: THRESHOLDS_FORMAT_VERSION,
            grasp_span: 0.45,
            single_arm_payload: 6.0,
            wheel_step_limit: 0.05,
            leg_step_limit: 0.25,
            chassis_width: 0.7,
            occupancy_cell_size: 0.25,
            passage_probe: 2.0,
            door_corridor: 0.5,
        }
    }
}

impl Thresholds {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let t: Thresholds = toml::from_str(text).map_err(|e| e.to_string())?;
        if t.format_version != THRESHOLDS_FORMAT_VERSION {
            return Err(format!(
                "threshold file format_version {} is not supported (expected {THRESHOLDS_FORMAT_VERSION})",
                t.format_version
            ));
        }
        let lengths = [
            ("grasp_span", t.grasp_span),
            ("single_arm_payload", t.single_arm_payload),
            ("wheel_step_limit", t.wheel_step_limit),
            ("leg_step_limit", t.leg_step_limit),
            ("chassis_width", t.chassis_width),
            ("occupancy_cell_size", t.occupancy_cell_size),
            ("passage_probe", t.passage_probe),
            ("door_corridor", t.door_corridor),
        ];
        for (key, v) in lengths {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("`{key}` must be a non-negative number"));
            }
        }
        if t.occupancy_cell_size <= 0.0 {
            return Err("`occupancy_cell_size` must be positive".into());
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("thresholds serialize")
    }

    /// Multiplies every length threshold by `k` (mass is untouched).
    pub fn scaled_lengths(&self, k: f64) -> Self {
        Thresholds {
            grasp_span: self.grasp_span * k,
            wheel_step_limit: self.wheel_step_limit * k,
            leg_step_limit: self.leg_step_limit * k,
            chassis_width: self.chassis_width * k,
            occupancy_cell_size: self.occupancy_cell_size * k,
            passage_probe: self.passage_probe * k,
            door_corridor: self.door_corridor * k,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_file_round_trip_and_partial_override() {
        let t = Thresholds::default();
        assert_eq!(Thresholds::from_toml(&t.to_toml()).unwrap(), t);
        let partial = Thresholds::from_toml("format_version = 1\ngrasp_span = 0.5\n").unwrap();
        assert_eq!(partial.grasp_span, 0.5);
        assert_eq!(partial.chassis_width, 0.7);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Thresholds::from_toml("format_version = 2").is_err());
        assert!(Thresholds::from_toml("format_version = 1\nwingspan = 3.0").is_err());
        assert!(Thresholds::from_toml("format_version = 1\nchassis_width = -1.0").is_err());
    }
}
