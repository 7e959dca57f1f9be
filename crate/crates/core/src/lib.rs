//! Planning and execution engine for humanoid loco-manipulation.
//!
//! Free-text instructions are turned into hierarchical task graphs of
//! skill primitives by a pluggable language-model client, validated
//! against a motion library, compiled to behavior trees, and executed
//! against a seeded kinematic simulator with failure injection and
//! recovery.

pub mod bt;
pub mod client;
pub mod modes;
pub mod morphology;
pub mod motion_library;
pub mod planner;
pub mod predicate;
pub mod refs;
pub mod sim;
pub mod taskgraph;

pub use modes::{ErrorCategory, LocomotionMode, LocomotionSupport, ManipulationMode};
pub use motion_library::{MotionLibrary, SkillPrimitive};
pub use taskgraph::TaskGraph;
