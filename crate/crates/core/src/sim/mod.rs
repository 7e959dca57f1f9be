//! Seeded kinematic stand-in for the robot.
//!
//! Skills are executed by checking their declared preconditions against the
//! scene, drawing a failure from a per-invocation random stream, and on
//! success applying their declared effects. There are no dynamics: the
//! failure profile carries them statistically.

mod adapter;
mod exec;
pub mod scene;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modes::ErrorCategory;
use crate::morphology::{MorphologyChoice, Thresholds};
use crate::predicate::PredicateSymbol;
use scene::{Point, SceneSnapshot};

pub use adapter::{DispatchLog, ReplanRequest, SimWorld};
pub use exec::{evaluate_predicate, execute_skill, Binding, Bindings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// `at` holds within this distance (m).
    pub at_tolerance: f64,
    /// `at` preconditions of hand-using skills hold within this distance (m).
    pub reach: f64,
    /// Distance the base stops short of an entity it moves to (m).
    pub standoff: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            at_tolerance: 0.5,
            reach: 0.9,
            standoff: 0.4,
        }
    }
}

/// Failure injection settings, loadable from a flat TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FailureInjection {
    pub rng_seed: u64,
    /// Offset (m) applied to a target's perceived position after a
    /// perception failure.
    pub misalignment_bias: f64,
    /// Failure probability for every skill without a per-skill override.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub default_failure_prob: Option<f64>,
    /// Per-skill failure probabilities.
    pub failure_prob: BTreeMap<String, f64>,
    /// Relative weights for the category of an injected failure. Empty
    /// means each skill's own category.
    pub category_mix: BTreeMap<ErrorCategory, f64>,
}

impl Default for FailureInjection {
    fn default() -> Self {
        FailureInjection {
            rng_seed: 0,
            misalignment_bias: 0.05,
            default_failure_prob: None,
            failure_prob: BTreeMap::new(),
            category_mix: BTreeMap::new(),
        }
    }
}

impl FailureInjection {
    pub fn seeded(rng_seed: u64) -> Self {
        FailureInjection {
            rng_seed,
            ..Default::default()
        }
    }

    pub fn with_default_prob(mut self, p: f64) -> Self {
        self.default_failure_prob = Some(p);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let probs = self
            .default_failure_prob
            .iter()
            .map(|p| ("default_failure_prob".to_string(), *p))
            .chain(self.failure_prob.iter().map(|(k, p)| (format!("failure_prob.{k}"), *p)));
        for (key, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("`{key}` = {p} is not a probability"));
            }
        }
        if !self.misalignment_bias.is_finite() || self.misalignment_bias < 0.0 {
            return Err("`misalignment_bias` must be non-negative".into());
        }
        if self.category_mix.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err("`category_mix` weights must be non-negative".into());
        }
        if !self.category_mix.is_empty() && self.category_mix.values().sum::<f64>() <= 0.0 {
            return Err("`category_mix` weights must not all be zero".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let inj: FailureInjection = toml::from_str(text).map_err(|e| e.to_string())?;
        inj.validate()?;
        Ok(inj)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("injection serializes")
    }

    /// The random stream for one invocation. Streams depend only on the
    /// seed, the run and the invocation's slot and attempt number, so
    /// adding or removing other invocations never shifts this one.
    pub fn stream(&self, run: u64, slot: &str, attempt: u32) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(run);
        let key = (fnv1a(slot) & 0xFFFF_FFFF) << 32 | u64::from(attempt);
        // 16 words per invocation; at most four are consumed.
        rng.set_word_pos(u128::from(key) << 4);
        rng
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ExecError {
    #[error("precondition `{0}` does not hold")]
    PreconditionUnmet(PredicateSymbol),
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("cannot bind `{0}`")]
    UnboundReference(String),
    #[error("morphology cannot execute this: {0}")]
    UnsupportedMorphology(String),
    #[error("cannot place there: {0}")]
    InvalidPlacement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillOutcome {
    pub status: SkillStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
    pub ticks_elapsed: u32,
    /// Paths of the scene fields the invocation changed.
    pub world_delta: Vec<String>,
}

/// One skill call. `slot` names the calling site (a tree node id); the
/// world counts attempts per slot to pick the random stream. It defaults
/// to the skill name.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub skill: String,
    pub args: BTreeMap<String, serde_json::Value>,
    pub morphology: Option<MorphologyChoice>,
    pub slot: Option<String>,
}

impl Invocation {
    pub fn new(skill: &str, args: &[(&str, serde_json::Value)]) -> Self {
        Invocation {
            skill: skill.to_string(),
            args: args.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            morphology: None,
            slot: None,
        }
    }

    pub fn with_morphology(mut self, choice: MorphologyChoice) -> Self {
        self.morphology = Some(choice);
        self
    }

    pub fn in_slot(mut self, slot: &str) -> Self {
        self.slot = Some(slot.to_string());
        self
    }
}

/// Ground-truth scene plus the robot's perception state for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub scene: SceneSnapshot,
    /// Offsets between perceived and true positions, per entity.
    pub perception_offsets: BTreeMap<String, Point>,
    pub config: SimConfig,
    pub thresholds: Thresholds,
    /// Stream index of this run in the injection's random sequence.
    pub run: u64,
    attempts: BTreeMap<String, u32>,
}

impl World {
    pub fn new(scene: SceneSnapshot) -> Self {
        World {
            scene,
            perception_offsets: BTreeMap::new(),
            config: SimConfig::default(),
            thresholds: Thresholds::default(),
            run: 0,
            attempts: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, config: SimConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_thresholds(mut self, thresholds: Thresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn for_run(mut self, run: u64) -> Self {
        self.run = run;
        self
    }

    /// The scene as the robot perceives it.
    pub fn perceived_scene(&self) -> SceneSnapshot {
        let mut scene = self.scene.clone();
        for (id, off) in &self.perception_offsets {
            let bounds = scene.world_bounds;
            if let Some(o) = scene.object_mut(id) {
                o.position = bounds.clamp(Point::new(o.position.x + off.x, o.position.y + off.y));
            } else if let Some(d) = scene.doors.iter_mut().find(|d| &d.id == id) {
                d.position = bounds.clamp(Point::new(d.position.x + off.x, d.position.y + off.y));
            }
        }
        scene
    }

    /// Serialized final state, for byte-level comparisons.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn injection_file_round_trip() {
        let text = "rng_seed = 7\ndefault_failure_prob = 0.1\n\n[failure_prob]\ngrasp_object = 0.2\n\n[category_mix]\nexecution_dynamics = 3.0\nperception_misalignment = 1.0\n";
        let inj = FailureInjection::from_toml(text).unwrap();
        assert_eq!(inj.rng_seed, 7);
        assert_eq!(inj.misalignment_bias, 0.05);
        assert_eq!(inj.failure_prob["grasp_object"], 0.2);
        assert_eq!(inj.category_mix[&ErrorCategory::ExecutionDynamics], 3.0);
        assert_eq!(FailureInjection::from_toml(&inj.to_toml()).unwrap(), inj);
        assert!(FailureInjection::from_toml("default_failure_prob = 1.5").is_err());
    }

    #[test]
    fn streams_are_independent_of_other_slots() {
        let inj = FailureInjection::seeded(3);
        let a = inj.stream(0, "n1", 0).next_u64();
        assert_eq!(inj.stream(0, "n1", 0).next_u64(), a);
        assert_ne!(inj.stream(0, "n1", 1).next_u64(), a);
        assert_ne!(inj.stream(1, "n1", 0).next_u64(), a);
        assert_ne!(inj.stream(0, "n2", 0).next_u64(), a);
    }
}
