//! Gateway configuration: an optional TOML file, then environment
//! overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Completion endpoint URL. Without one, a transcript must be given.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API credential.
    pub credential_env: String,
    pub model: String,
    pub timeout_secs: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            endpoint: None,
            credential_env: "LOCOPLAN_API_KEY".into(),
            model: "default".into(),
            timeout_secs: 60,
        }
    }
}

impl ModelConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    /// Morphology threshold file; built-in defaults if absent.
    pub thresholds: Option<PathBuf>,
    /// Failure-injection file; each skill's own profile if absent.
    pub injection: Option<PathBuf>,
    /// Motion library file; the bundled library if absent.
    pub library: Option<PathBuf>,
    /// Scene used when a request names none.
    pub scene: Option<PathBuf>,
    /// Run logs go in `runs/`, batch files in `batches/`.
    pub data_dir: PathBuf,
    pub bind: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            model: ModelConfig::default(),
            thresholds: None,
            injection: None,
            library: None,
            scene: None,
            data_dir: PathBuf::from("locoplan-data"),
            bind: "127.0.0.1:8080".into(),
        }
    }
}

/// Environment variables that override the file.
pub const ENV_VARS: [&str; 7] = [
    "LOCOPLAN_MODEL_ENDPOINT",
    "LOCOPLAN_CREDENTIAL_ENV",
    "LOCOPLAN_MODEL",
    "LOCOPLAN_THRESHOLDS",
    "LOCOPLAN_DATA_DIR",
    "LOCOPLAN_BIND",
    "LOCOPLAN_SCENE",
];

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Reads `path` if given, then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                Self::from_toml(&text).map_err(|e| format!("{}: {e}", p.display()))?
            }
            None => Config::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        Ok(config)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(v) = var("LOCOPLAN_MODEL_ENDPOINT") {
            self.model.endpoint = Some(v);
        }
        if let Some(v) = var("LOCOPLAN_CREDENTIAL_ENV") {
            self.model.credential_env = v;
        }
        if let Some(v) = var("LOCOPLAN_MODEL") {
            self.model.model = v;
        }
        if let Some(v) = var("LOCOPLAN_THRESHOLDS") {
            self.thresholds = Some(v.into());
        }
        if let Some(v) = var("LOCOPLAN_DATA_DIR") {
            self.data_dir = v.into();
        }
        if let Some(v) = var("LOCOPLAN_BIND") {
            self.bind = v;
        }
        if let Some(v) = var("LOCOPLAN_SCENE") {
            self.scene = Some(v.into());
        }
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.data_dir.join("runs")
    }

    pub fn batches_dir(&self) -> PathBuf {
        self.data_dir.join("batches")
    }
}
