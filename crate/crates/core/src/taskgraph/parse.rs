use serde_json::Value;
use thiserror::Error;

use super::{TaskGraph, WireGraph, TASK_GRAPH_FORMAT_VERSION};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no structured object found in planner output")]
    NoStructuredBlock,
    #[error("malformed task graph at character {position}: {message}")]
    Malformed { position: usize, message: String },
    #[error("task graph format_version {found} is not supported (expected {TASK_GRAPH_FORMAT_VERSION})")]
    FormatVersionMismatch { found: String },
}

/// Extracts the first `{...}` block that parses as a task graph.
///
/// Planner output may wrap the object in code fences or prose; every `{`
/// is tried as a candidate start in order, and the first candidate that
/// deserializes into the wire schema wins. When no candidate succeeds the
/// error from the earliest candidate is returned.
pub fn parse_task_graph(text: &str) -> Result<TaskGraph, ParseError> {
    let mut first_error: Option<ParseError> = None;
    for (start, ch) in text.char_indices() {
        if ch != '{' {
            continue;
        }
        match parse_candidate(text, start) {
            Ok(graph) => return Ok(graph),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.unwrap_or(ParseError::NoStructuredBlock))
}

fn parse_candidate(text: &str, start: usize) -> Result<TaskGraph, ParseError> {
    let slice = &text[start..];
    let mut stream = serde_json::Deserializer::from_str(slice).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => {
            return Err(ParseError::Malformed {
                position: char_position(text, start, slice, e.line(), e.column()),
                message: e.to_string(),
            })
        }
        None => return Err(ParseError::NoStructuredBlock),
    };
    let position = text[..start].chars().count();
    match value.get("format_version") {
        Some(v) if v.as_u64() == Some(TASK_GRAPH_FORMAT_VERSION) => {}
        Some(Value::String(s)) => return Err(ParseError::FormatVersionMismatch { found: s.clone() }),
        Some(other) => {
            return Err(ParseError::FormatVersionMismatch {
                found: other.to_string(),
            })
        }
        None => {
            return Err(ParseError::Malformed {
                position,
                message: "missing field `format_version`".into(),
            })
        }
    }
    let wire: WireGraph = serde_json::from_value(value).map_err(|e| ParseError::Malformed {
        position,
        message: e.to_string(),
    })?;
    TaskGraph::from_wire(wire).map_err(|message| ParseError::Malformed { position, message })
}

/// Converts a serde_json (line, byte column) inside `slice` into a character
/// offset within the full `text`.
fn char_position(text: &str, start: usize, slice: &str, line: usize, column: usize) -> usize {
    let mut offset = 0usize;
    for (i, l) in slice.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            offset += column.saturating_sub(1).min(l.len());
            break;
        }
        offset += l.len();
    }
    let mut end = (start + offset).min(text.len());
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    text[..end].chars().count()
}
