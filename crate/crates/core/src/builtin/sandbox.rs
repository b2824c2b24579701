//! Client for the external script sandbox.
//!
//! The configured endpoint (conventionally `/run`) takes a POST of
//! `{"script", "inputs", "artifact_dir"}` and answers
//! `{"stdout_structure", "files": [...]}`. A non-2xx status or an `error` field
//! marks a failed run.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::tools::ToolError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxRequest {
    pub script: String,
    pub inputs: Value,
    pub artifact_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SandboxResponse {
    #[serde(default)]
    pub stdout_structure: Value,
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SandboxClient {
    url: String,
    http: reqwest::Client,
}

impl SandboxClient {
    pub fn new(url: &str, timeout: Duration) -> Result<Self, ToolError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ToolError::new(format!("sandbox client: {e}")))?;
        Ok(Self {
            url: url.to_string(),
            http,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub async fn run(&self, request: &SandboxRequest) -> Result<SandboxResponse, ToolError> {
        let resp = self
            .http
            .post(&self.url)
            .json(request)
            .send()
            .await
            .map_err(|e| ToolError::new(format!("sandbox unreachable: {e}")))?;
        let status = resp.status();
        let body = resp
            .text()
            .await
            .map_err(|e| ToolError::new(format!("sandbox read failed: {e}")))?;
        let parsed: Option<SandboxResponse> = serde_json::from_str(&body).ok();
        if !status.is_success() {
            let detail = parsed.and_then(|p| p.error).unwrap_or(body);
            return Err(ToolError::new(format!("sandbox returned {status}: {detail}")));
        }
        let parsed = parsed.ok_or_else(|| ToolError::new(format!("sandbox reply is not valid JSON: {body}")))?;
        if let Some(err) = &parsed.error {
            return Err(ToolError::new(format!("script failed: {err}")));
        }
        Ok(parsed)
    }
}
