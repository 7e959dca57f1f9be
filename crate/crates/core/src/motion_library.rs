//! The motion library: a registry of skill primitives the planner can
//! compose, with a versioned JSON file format.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modes::{ErrorCategory, LocomotionSupport, ManipulationMode};
use crate::predicate::{param_ref, Effect, Predicate};

pub const LIBRARY_FORMAT_VERSION: u64 = 1;

const DEFAULT_LIBRARY: &str = include_str!("../data/library.json");

#[derive(Debug, Error, PartialEq)]
pub enum LibraryError {
    #[error("skill `{0}` is already registered")]
    DuplicateSkill(String),
    #[error("invalid skill spec at `{path}`: {reason}")]
    InvalidSpec { path: String, reason: String },
    #[error("library format version {found} is not supported (expected {LIBRARY_FORMAT_VERSION})")]
    FormatVersionMismatch { found: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(String),
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> LibraryError {
    LibraryError::InvalidSpec {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ObjectRef,
    LocationRef,
    Arm,
    Number,
    Text,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::ObjectRef => "object_ref",
            ParamKind::LocationRef => "location_ref",
            ParamKind::Arm => "arm",
            ParamKind::Number => "number",
            ParamKind::Text => "text",
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default = "default_true")]
    pub required: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureProfile {
    pub base_failure_prob: f64,
    pub error_category: ErrorCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillPrimitive {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    pub manipulation_modes: BTreeSet<ManipulationMode>,
    pub locomotion_modes: BTreeSet<LocomotionSupport>,
    #[serde(default)]
    pub preconditions: Vec<Predicate>,
    #[serde(default)]
    pub effects: Vec<Effect>,
    pub nominal_duration: u32,
    pub failure_profile: FailureProfile,
}

impl SkillPrimitive {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// True when the skill physically uses a hand.
    pub fn manipulates(&self) -> bool {
        self.manipulation_modes.iter().any(|m| *m != ManipulationMode::None)
    }

    /// Checks every structural invariant, reporting the first violation
    /// with a field path.
    pub fn validate(&self) -> Result<(), LibraryError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must be non-empty"));
        }
        let mut seen = HashSet::new();
        for (i, p) in self.params.iter().enumerate() {
            if p.name.trim().is_empty() {
                return Err(invalid(format!("params[{i}].name"), "must be non-empty"));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(invalid(
                    format!("params[{i}].name"),
                    format!("duplicate parameter `{}`", p.name),
                ));
            }
        }
        if self.manipulation_modes.is_empty() {
            return Err(invalid("manipulation_modes", "must be non-empty"));
        }
        if self.locomotion_modes.is_empty() {
            return Err(invalid("locomotion_modes", "must be non-empty"));
        }
        if self.nominal_duration < 1 {
            return Err(invalid("nominal_duration", "must be at least 1 tick"));
        }
        let prob = self.failure_profile.base_failure_prob;
        if !(0.0..=1.0).contains(&prob) {
            return Err(invalid(
                "failure_profile.base_failure_prob",
                format!("{prob} is outside [0, 1]"),
            ));
        }
        for (i, pre) in self.preconditions.iter().enumerate() {
            let path = format!("preconditions[{i}]");
            if !pre.arity_ok() {
                return Err(invalid(
                    format!("{path}.args"),
                    format!("`{}` takes {} argument(s)", pre.predicate, pre.predicate.arity()),
                ));
            }
            self.check_param_refs(&path, &pre.args)?;
        }
        for (i, eff) in self.effects.iter().enumerate() {
            let path = format!("effects[{i}]");
            if !eff.arity_ok() {
                return Err(invalid(
                    format!("{path}.args"),
                    format!("`{}` takes {} argument(s)", eff.predicate, eff.predicate.arity()),
                ));
            }
            self.check_param_refs(&path, &eff.args)?;
        }
        Ok(())
    }

    fn check_param_refs(&self, path: &str, args: &[String]) -> Result<(), LibraryError> {
        for (j, arg) in args.iter().enumerate() {
            if let Some(name) = param_ref(arg) {
                if self.param(name).is_none() {
                    return Err(invalid(
                        format!("{path}.args[{j}]"),
                        format!("references undeclared parameter `{name}`"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// One-line signature used in planner prompts.
    pub fn signature(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|p| {
                let opt = if p.required { "" } else { "?" };
                format!("{}{opt}: {}", p.name, p.kind)
            })
            .collect::<Vec<_>>()
            .join(", ");
        let join = |items: Vec<String>| items.join(", ");
        format!(
            "{}({params}) manipulation=[{}] locomotion=[{}] pre=[{}] effects=[{}] -- {}",
            self.name,
            join(self.manipulation_modes.iter().map(|m| m.to_string()).collect()),
            join(self.locomotion_modes.iter().map(|m| m.to_string()).collect()),
            join(self.preconditions.iter().map(|p| p.to_string()).collect()),
            join(self.effects.iter().map(|e| e.to_string()).collect()),
            self.description
        )
    }
}

/// Index of a skill in registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SkillId(usize);

/// Restricts a listing to skills whose mode sets intersect the given sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MorphologyFilter {
    pub manipulation: Option<BTreeSet<ManipulationMode>>,
    pub locomotion: Option<BTreeSet<LocomotionSupport>>,
}

impl MorphologyFilter {
    pub fn manipulation(modes: &[ManipulationMode]) -> Self {
        MorphologyFilter {
            manipulation: Some(modes.iter().copied().collect()),
            locomotion: None,
        }
    }

    pub fn locomotion(modes: &[LocomotionSupport]) -> Self {
        MorphologyFilter {
            manipulation: None,
            locomotion: Some(modes.iter().copied().collect()),
        }
    }

    pub fn admits(&self, skill: &SkillPrimitive) -> bool {
        let manip_ok = self
            .manipulation
            .as_ref()
            .is_none_or(|want| !want.is_disjoint(&skill.manipulation_modes));
        let loco_ok = self.locomotion.as_ref().is_none_or(|want| {
            want.contains(&LocomotionSupport::Any)
                || skill.locomotion_modes.contains(&LocomotionSupport::Any)
                || !want.is_disjoint(&skill.locomotion_modes)
        });
        manip_ok && loco_ok
    }
}

#[derive(Serialize, Deserialize)]
struct LibraryDocument {
    format_version: u64,
    skills: Vec<SkillPrimitive>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MotionLibrary {
    skills: Vec<SkillPrimitive>,
    by_name: BTreeMap<String, usize>,
}

impl MotionLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped eight-skill library.
    pub fn default_library() -> Self {
        Self::from_json(DEFAULT_LIBRARY).expect("bundled library is valid")
    }

    pub fn register_skill(&mut self, spec: SkillPrimitive) -> Result<SkillId, LibraryError> {
        spec.validate()?;
        if self.by_name.contains_key(&spec.name) {
            return Err(LibraryError::DuplicateSkill(spec.name));
        }
        let idx = self.skills.len();
        self.by_name.insert(spec.name.clone(), idx);
        self.skills.push(spec);
        Ok(SkillId(idx))
    }

    pub fn resolve(&self, id: SkillId) -> Option<&SkillPrimitive> {
        self.skills.get(id.0)
    }

    pub fn get(&self, name: &str) -> Option<&SkillPrimitive> {
        self.by_name.get(name).map(|&i| &self.skills[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    /// Skills sorted by name, optionally restricted by morphology.
    pub fn list_skills(&self, filter: Option<&MorphologyFilter>) -> Vec<&SkillPrimitive> {
        self.by_name
            .values()
            .map(|&i| &self.skills[i])
            .filter(|s| filter.is_none_or(|f| f.admits(s)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let doc = LibraryDocument {
            format_version: LIBRARY_FORMAT_VERSION,
            skills: self.skills.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("library serializes")
    }

    pub fn save_library(&self, destination: &Path) -> Result<(), LibraryError> {
        fs::write(destination, self.to_json()).map_err(|e| LibraryError::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LibraryError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_error)?;
        check_version(&value)?;
        let doc: LibraryDocument = serde_json::from_value(value).map_err(|e| {
            // from_value has no position info; re-run on the text for one.
            serde_json::from_str::<LibraryDocument>(text)
                .err()
                .map(parse_error)
                .unwrap_or_else(|| parse_error(e))
        })?;
        let mut library = MotionLibrary::new();
        for (i, skill) in doc.skills.into_iter().enumerate() {
            library.register_skill(skill).map_err(|err| match err {
                LibraryError::InvalidSpec { path, reason } => LibraryError::InvalidSpec {
                    path: format!("skills[{i}].{path}"),
                    reason,
                },
                other => other,
            })?;
        }
        Ok(library)
    }

    pub fn load_library(source: &Path) -> Result<Self, LibraryError> {
        let text = fs::read_to_string(source).map_err(|e| LibraryError::Io(e.to_string()))?;
        Self::from_json(&text)
    }
}

fn check_version(value: &serde_json::Value) -> Result<(), LibraryError> {
    match value.get("format_version") {
        Some(v) if v.as_u64() == Some(LIBRARY_FORMAT_VERSION) => Ok(()),
        Some(serde_json::Value::String(s)) => Err(LibraryError::FormatVersionMismatch { found: s.clone() }),
        Some(v) => Err(LibraryError::FormatVersionMismatch { found: v.to_string() }),
        None => Err(LibraryError::FormatVersionMismatch {
            found: "missing".into(),
        }),
    }
}

fn parse_error(e: serde_json::Error) -> LibraryError {
    LibraryError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predicate::PredicateSymbol;

    fn skill(name: &str, manip: &[ManipulationMode]) -> SkillPrimitive {
        SkillPrimitive {
            name: name.into(),
            description: format!("{name} skill"),
            params: vec![ParamSpec {
                name: "object".into(),
                kind: ParamKind::ObjectRef,
                required: true,
            }],
            manipulation_modes: manip.iter().copied().collect(),
            locomotion_modes: [LocomotionSupport::Any].into(),
            preconditions: vec![Predicate::new(PredicateSymbol::At, &["robot", "?object"])],
            effects: vec![Effect::new(PredicateSymbol::Holding, &["?object"])],
            nominal_duration: 2,
            failure_profile: FailureProfile {
                base_failure_prob: 0.1,
                error_category: ErrorCategory::ExecutionDynamics,
            },
        }
    }

    #[test]
    fn register_into_empty_library() {
        let mut lib = MotionLibrary::new();
        let id = lib
            .register_skill(skill("grasp_object", &[ManipulationMode::Dual]))
            .unwrap();
        assert_eq!(lib.len(), 1);
        assert_eq!(lib.resolve(id).unwrap().name, "grasp_object");
    }

    #[test]
    fn duplicate_registration_is_rejected() {
        let mut lib = MotionLibrary::new();
        lib.register_skill(skill("grasp_object", &[ManipulationMode::Dual]))
            .unwrap();
        let err = lib
            .register_skill(skill("grasp_object", &[ManipulationMode::Dual]))
            .unwrap_err();
        assert_eq!(err, LibraryError::DuplicateSkill("grasp_object".into()));
        assert_eq!(lib.len(), 1);
    }

    #[test]
    fn zero_duration_is_invalid() {
        let mut s = skill("grasp_object", &[ManipulationMode::Dual]);
        s.nominal_duration = 0;
        match MotionLibrary::new().register_skill(s).unwrap_err() {
            LibraryError::InvalidSpec { path, .. } => assert_eq!(path, "nominal_duration"),
            other => panic!("unexpected {other:?}"),
        }
    }

    type Mutation = Box<dyn Fn(&mut SkillPrimitive)>;

    #[test]
    fn invariant_violations_carry_field_paths() {
        let cases: Vec<(Mutation, &str)> = vec![
            (Box::new(|s| s.name.clear()), "name"),
            (Box::new(|s| s.manipulation_modes.clear()), "manipulation_modes"),
            (Box::new(|s| s.locomotion_modes.clear()), "locomotion_modes"),
            (
                Box::new(|s| s.failure_profile.base_failure_prob = 1.5),
                "failure_profile.base_failure_prob",
            ),
            (Box::new(|s| s.params.push(s.params[0].clone())), "params[1].name"),
            (
                Box::new(|s| {
                    s.preconditions[0].args.pop();
                }),
                "preconditions[0].args",
            ),
            (
                Box::new(|s| s.effects[0].args[0] = "?ghost".into()),
                "effects[0].args[0]",
            ),
        ];
        for (mutate, expected) in cases {
            let mut s = skill("x", &[ManipulationMode::Dual]);
            mutate(&mut s);
            match s.validate() {
                Err(LibraryError::InvalidSpec { path, .. }) => assert_eq!(path, expected),
                other => panic!("{expected}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn listing_is_sorted_and_filterable() {
        assert!(MotionLibrary::new().list_skills(None).is_empty());

        let mut lib = MotionLibrary::new();
        lib.register_skill(skill("c", &[ManipulationMode::Dual])).unwrap();
        lib.register_skill(skill("b", &[ManipulationMode::SingleLeft])).unwrap();
        lib.register_skill(skill("a", &[ManipulationMode::Dual])).unwrap();
        let names: Vec<_> = lib.list_skills(None).iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);

        let filter = MorphologyFilter::manipulation(&[ManipulationMode::Dual]);
        let names: Vec<_> = lib.list_skills(Some(&filter)).iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["a", "c"]);
    }

    #[test]
    fn locomotion_any_intersects_everything() {
        let s = skill("a", &[ManipulationMode::None]);
        assert!(MorphologyFilter::locomotion(&[LocomotionSupport::Legged]).admits(&s));
    }

    #[test]
    fn version_mismatch_and_truncation() {
        let text = MotionLibrary::default_library().to_json();
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": \"99\"", 1);
        assert_eq!(
            MotionLibrary::from_json(&bumped).unwrap_err(),
            LibraryError::FormatVersionMismatch { found: "99".into() }
        );
        let truncated = &text[..text.len() / 2];
        assert!(matches!(
            MotionLibrary::from_json(truncated).unwrap_err(),
            LibraryError::ParseError { .. }
        ));
    }

    #[test]
    fn default_library_ships_eight_skills() {
        let lib = MotionLibrary::default_library();
        let names: Vec<_> = lib.list_skills(None).iter().map(|s| s.name.clone()).collect();
        assert_eq!(
            names,
            [
                "approach",
                "climb_step",
                "grasp_object",
                "navigate_to",
                "open_door",
                "place_object",
                "push_object",
                "release"
            ]
        );
    }
}
