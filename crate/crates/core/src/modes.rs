//! Manipulation and locomotion mode enumerations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulationMode {
    SingleLeft,
    SingleRight,
    Dual,
    None,
}

impl ManipulationMode {
    pub const ALL: [ManipulationMode; 4] = [
        ManipulationMode::SingleLeft,
        ManipulationMode::SingleRight,
        ManipulationMode::Dual,
        ManipulationMode::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ManipulationMode::SingleLeft => "single_left",
            ManipulationMode::SingleRight => "single_right",
            ManipulationMode::Dual => "dual",
            ManipulationMode::None => "none",
        }
    }

    pub fn is_single(self) -> bool {
        matches!(self, ManipulationMode::SingleLeft | ManipulationMode::SingleRight)
    }
}

impl fmt::Display for ManipulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ManipulationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ManipulationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown manipulation mode `{s}`"))
    }
}

/// A concrete base mode the robot can be in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocomotionMode {
    Wheeled,
    Legged,
}

impl LocomotionMode {
    pub const ALL: [LocomotionMode; 2] = [LocomotionMode::Wheeled, LocomotionMode::Legged];

    pub fn as_str(self) -> &'static str {
        match self {
            LocomotionMode::Wheeled => "wheeled",
            LocomotionMode::Legged => "legged",
        }
    }
}

impl fmt::Display for LocomotionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LocomotionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LocomotionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown locomotion mode `{s}`"))
    }
}

/// Locomotion modes a skill declares it can run under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocomotionSupport {
    Wheeled,
    Legged,
    Any,
}

impl LocomotionSupport {
    pub fn admits(self, mode: LocomotionMode) -> bool {
        matches!(
            (self, mode),
            (LocomotionSupport::Any, _)
                | (LocomotionSupport::Wheeled, LocomotionMode::Wheeled)
                | (LocomotionSupport::Legged, LocomotionMode::Legged)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LocomotionSupport::Wheeled => "wheeled",
            LocomotionSupport::Legged => "legged",
            LocomotionSupport::Any => "any",
        }
    }
}

impl fmt::Display for LocomotionSupport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cause labels used for failure accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    ExecutionDynamics,
    PerceptionMisalignment,
    Planning,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 3] = [
        ErrorCategory::ExecutionDynamics,
        ErrorCategory::PerceptionMisalignment,
        ErrorCategory::Planning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::ExecutionDynamics => "execution_dynamics",
            ErrorCategory::PerceptionMisalignment => "perception_misalignment",
            ErrorCategory::Planning => "planning",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ErrorCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown error category `{s}`"))
    }
}
