//! Closed predicate vocabulary shared by skill preconditions, effects,
//! condition nodes and the simulated world.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The six predicate symbols a library may use.
///
/// Extending this set changes the library file format and must bump
/// `format_version`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredicateSymbol {
    /// `at(entity, place)`: entity is within tolerance of place.
    At,
    /// `holding(object)`: some hand grips the object.
    Holding,
    /// `free_hand()`: at least one hand is free.
    FreeHand,
    /// `door_open(door)`.
    DoorOpen,
    /// `on_surface(object, surface)`.
    OnSurface,
    /// `base_mode(mode)`: wheeled or legged.
    BaseMode,
}

impl PredicateSymbol {
    pub const ALL: [PredicateSymbol; 6] = [
        PredicateSymbol::At,
        PredicateSymbol::Holding,
        PredicateSymbol::FreeHand,
        PredicateSymbol::DoorOpen,
        PredicateSymbol::OnSurface,
        PredicateSymbol::BaseMode,
    ];

    pub fn arity(self) -> usize {
        match self {
            PredicateSymbol::At | PredicateSymbol::OnSurface => 2,
            PredicateSymbol::Holding | PredicateSymbol::DoorOpen | PredicateSymbol::BaseMode => 1,
            PredicateSymbol::FreeHand => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PredicateSymbol::At => "at",
            PredicateSymbol::Holding => "holding",
            PredicateSymbol::FreeHand => "free_hand",
            PredicateSymbol::DoorOpen => "door_open",
            PredicateSymbol::OnSurface => "on_surface",
            PredicateSymbol::BaseMode => "base_mode",
        }
    }
}

impl fmt::Display for PredicateSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PredicateSymbol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PredicateSymbol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown predicate symbol `{s}`"))
    }
}

/// A predicate argument: `?name` refers to a skill parameter, anything
/// else is a literal (an entity id, `robot`, or a mode name).
pub type PredicateArg = String;

/// Returns the parameter name if `arg` is a `?param` reference.
pub fn param_ref(arg: &str) -> Option<&str> {
    arg.strip_prefix('?')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub predicate: PredicateSymbol,
    #[serde(default)]
    pub args: Vec<PredicateArg>,
    #[serde(default)]
    pub negated: bool,
}

impl Predicate {
    pub fn new(predicate: PredicateSymbol, args: &[&str]) -> Self {
        Predicate {
            predicate,
            args: args.iter().map(|a| a.to_string()).collect(),
            negated: false,
        }
    }

    pub fn negate(mut self) -> Self {
        self.negated = !self.negated;
        self
    }

    pub fn arity_ok(&self) -> bool {
        self.args.len() == self.predicate.arity()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("not ")?;
        }
        write!(f, "{}({})", self.predicate, self.args.join(", "))
    }
}

/// A skill effect. Effects only assert; there is no negated form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effect {
    pub predicate: PredicateSymbol,
    #[serde(default)]
    pub args: Vec<PredicateArg>,
}

impl Effect {
    pub fn new(predicate: PredicateSymbol, args: &[&str]) -> Self {
        Effect {
            predicate,
            args: args.iter().map(|a| a.to_string()).collect(),
        }
    }

    pub fn arity_ok(&self) -> bool {
        self.args.len() == self.predicate.arity()
    }

    pub fn as_predicate(&self) -> Predicate {
        Predicate {
            predicate: self.predicate,
            args: self.args.clone(),
            negated: false,
        }
    }
}

impl fmt::Display for Effect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.predicate, self.args.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip_through_strings() {
        for sym in PredicateSymbol::ALL {
            assert_eq!(sym.as_str().parse::<PredicateSymbol>().unwrap(), sym);
        }
        assert!("fly".parse::<PredicateSymbol>().is_err());
    }

    #[test]
    fn arity_check() {
        assert!(Predicate::new(PredicateSymbol::FreeHand, &[]).arity_ok());
        assert!(!Predicate::new(PredicateSymbol::At, &["robot"]).arity_ok());
        assert_eq!(
            Predicate::new(PredicateSymbol::At, &["robot", "?target"])
                .negate()
                .to_string(),
            "not at(robot, ?target)"
        );
    }
}
