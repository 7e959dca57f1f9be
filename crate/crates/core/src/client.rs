//! Language-model client contract and a transcript-driven mock.

use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_length: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.0,
            max_length: 2048,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("model request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("transcript exhausted after {0} call(s)")]
    Exhausted(usize),
}

/// A text-completion model. Implementations must return (possibly with an
/// error) within their configured timeout rather than hang.
pub trait ModelClient: Send + Sync {
    fn complete(&self, prompt: &str, decoding: &Decoding) -> Result<String, ClientError>;

    fn identity(&self) -> &str;
}

/// One canned reply. `when` restricts the entry to prompts containing that
/// substring; `error` makes the call fail instead of answering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TranscriptEntry {
    Text(String),
    Keyed {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        when: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        text: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

impl TranscriptEntry {
    fn condition(&self) -> Option<&str> {
        match self {
            TranscriptEntry::Text(_) => None,
            TranscriptEntry::Keyed { when, .. } => when.as_deref(),
        }
    }

    fn reply(&self) -> Result<String, ClientError> {
        match self {
            TranscriptEntry::Text(t) => Ok(t.clone()),
            TranscriptEntry::Keyed { error: Some(e), .. } => Err(match e.as_str() {
                "timeout" => ClientError::Timeout,
                other => ClientError::Transport(other.to_string()),
            }),
            TranscriptEntry::Keyed { text, .. } => Ok(text.clone().unwrap_or_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default = "default_model")]
    pub model: String,
    pub responses: Vec<TranscriptEntry>,
}

fn default_model() -> String {
    "transcript-mock".into()
}

impl Transcript {
    pub fn new(responses: Vec<String>) -> Self {
        Transcript {
            model: default_model(),
            responses: responses.into_iter().map(TranscriptEntry::Text).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Default)]
struct TranscriptState {
    consumed: Vec<bool>,
    prompts: Vec<String>,
}

/// Replays a transcript in order. Each call takes the first unconsumed
/// entry whose `when` condition (if any) matches the prompt.
#[derive(Debug)]
pub struct TranscriptClient {
    transcript: Transcript,
    state: Mutex<TranscriptState>,
}

impl TranscriptClient {
    pub fn new(transcript: Transcript) -> Self {
        let n = transcript.responses.len();
        TranscriptClient {
            transcript,
            state: Mutex::new(TranscriptState {
                consumed: vec![false; n],
                prompts: Vec::new(),
            }),
        }
    }

    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(Transcript::new(responses.into_iter().map(Into::into).collect()))
    }

    pub fn calls(&self) -> usize {
        self.state.lock().expect("transcript lock").prompts.len()
    }

    /// Every prompt received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.state.lock().expect("transcript lock").prompts.clone()
    }
}

impl ModelClient for TranscriptClient {
    fn complete(&self, prompt: &str, _decoding: &Decoding) -> Result<String, ClientError> {
        let mut state = self.state.lock().expect("transcript lock");
        state.prompts.push(prompt.to_string());
        let calls = state.prompts.len();
        let pick = self
            .transcript
            .responses
            .iter()
            .enumerate()
            .find(|(i, e)| !state.consumed[*i] && e.condition().is_none_or(|w| prompt.contains(w)))
            .map(|(i, _)| i);
        match pick {
            Some(i) => {
                state.consumed[i] = true;
                self.transcript.responses[i].reply()
            }
            None => Err(ClientError::Exhausted(calls - 1)),
        }
    }

    fn identity(&self) -> &str {
        &self.transcript.model
    }
}
