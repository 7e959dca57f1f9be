//! Symbolic argument references resolved by the executor at tick time.
//!
//! Task-graph arguments may name an entity directly (`"box1"`) or defer the
//! binding with a `$scene.` reference:
//!
//! - `$scene.nearest(prefix)`: the object closest to the robot whose id
//!   starts with `prefix`.
//! - `$scene.robot`: the robot itself.

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymbolicRef {
    Nearest(String),
    Robot,
}

impl SymbolicRef {
    /// `None` for plain literals, `Some(Err(..))` for malformed `$` forms.
    pub fn parse(text: &str) -> Option<Result<SymbolicRef, String>> {
        let body = text.strip_prefix('$')?;
        let Some(rest) = body.strip_prefix("scene.") else {
            return Some(Err(format!("`{text}`: references must start with `$scene.`")));
        };
        if rest == "robot" {
            return Some(Ok(SymbolicRef::Robot));
        }
        let parsed = rest
            .strip_prefix("nearest(")
            .and_then(|r| r.strip_suffix(')'))
            .filter(|inner| {
                !inner.is_empty() && inner.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            });
        Some(match parsed {
            Some(prefix) => Ok(SymbolicRef::Nearest(prefix.to_string())),
            None => Err(format!(
                "`{text}`: expected `$scene.nearest(<id prefix>)` or `$scene.robot`"
            )),
        })
    }
}
