//! Model client for a completion endpoint over HTTP.
//!
//! Sends `{"model", "prompt", "temperature", "max_tokens"}` and accepts a
//! reply carrying the text as `text`, `choices[0].text` or
//! `choices[0].message.content`.

use serde_json::{json, Value};

use locoplan_core::client::{ClientError, Decoding, ModelClient};

use crate::config::ModelConfig;

pub struct HttpModelClient {
    endpoint: String,
    model: String,
    credential: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpModelClient {
    /// Reads the credential from the configured environment variable. Must
    /// not be called from inside an async runtime.
    pub fn from_config(config: &ModelConfig) -> Result<Self, String> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| "no model endpoint configured".to_string())?;
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpModelClient {
            endpoint,
            model: config.model.clone(),
            credential: std::env::var(&config.credential_env).ok(),
            http,
        })
    }
}

fn reply_text(body: &Value) -> Option<&str> {
    body.get("text")
        .or_else(|| body.pointer("/choices/0/text"))
        .or_else(|| body.pointer("/choices/0/message/content"))
        .and_then(Value::as_str)
}

impl ModelClient for HttpModelClient {
    fn complete(&self, prompt: &str, decoding: &Decoding) -> Result<String, ClientError> {
        let mut req = self.http.post(&self.endpoint).json(&json!({
            "model": self.model,
            "prompt": prompt,
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_length,
        }));
        if let Some(key) = &self.credential {
            req = req.bearer_auth(key);
        }
        let transport = |e: reqwest::Error| {
            if e.is_timeout() {
                ClientError::Timeout
            } else {
                ClientError::Transport(e.to_string())
            }
        };
        let resp = req.send().map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Transport(format!("endpoint answered {status}")));
        }
        let body: Value = resp.json().map_err(transport)?;
        reply_text(&body)
            .map(str::to_string)
            .ok_or_else(|| ClientError::Transport("reply carries no text".into()))
    }

    fn identity(&self) -> &str {
        &self.model
    }
}
