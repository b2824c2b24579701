//! Engine configuration file (TOML) and engine assembly.
//!
//! ```toml
//! lake = "lakes/artwork/lake.toml"
//! artifact_dir = "artifacts"
//! fixtures = "scenarios/example1"      # scripted mode: llm.json and vqa.json
//!
//! [llm]
//! mode = "scripted"                    # or "http"
//! # base_url = "https://api.example.com/v1"
//! # model = "some-model"
//! # api_key_env = "LAKEPLAN_API_KEY"   # the key itself is never read from this file
//! [llm.rates]
//! input_per_1k = 0.0025
//! output_per_1k = 0.01
//!
//! [tools]
//! # vqa_url = "http://127.0.0.1:8000/vqa"
//! vqa_mode = "path"                    # or "inline"
//! # sandbox_url = "http://127.0.0.1:8001/run"
//! prep_mode = "direct"                 # or "script" (needs sandbox_url)
//! renderer = "stub"                    # or "sandbox" (needs sandbox_url)
//! timeout_s = 60
//!
//! [executor]
//! workers = 4
//! [executor.selfdebug]
//! retries = 1
//! timeout = 120
//!
//! [control]
//! max_replans = 2
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builtin::{
    builtin_registry, BuiltinBackends, ChartRenderer, HttpVqaClient, PrepMode, SandboxClient, SandboxRenderer,
    ScriptedVqa, StubRenderer, VqaClient, VqaMode, VqaTable,
};
use crate::control::{ControlConfig, Engine};
use crate::executor::ExecutorConfig;
use crate::lake::DataLake;
use crate::llm::{Gateway, HttpBackend, HttpBackendConfig, LlmBackend, RateCard, ScriptedBackend};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingEnv(String),
    #[error("cannot open lake: {0}")]
    Lake(#[from] crate::lake::LakeError),
    #[error("cannot set up {component}: {message}")]
    Backend { component: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub mode: LlmMode,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
    pub rates: RateCard,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            mode: LlmMode::Scripted,
            base_url: None,
            model: None,
            api_key_env: None,
            max_retries: 3,
            backoff_ms: 500,
            timeout_s: 120,
            rates: RateCard::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RendererKind {
    #[default]
    Stub,
    Sandbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolsConfig {
    pub vqa_url: Option<String>,
    pub vqa_mode: VqaMode,
    pub sandbox_url: Option<String>,
    pub prep_mode: PrepMode,
    pub renderer: RendererKind,
    pub timeout_s: u64,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self {
            vqa_url: None,
            vqa_mode: VqaMode::Path,
            sandbox_url: None,
            prep_mode: PrepMode::Direct,
            renderer: RendererKind::Stub,
            timeout_s: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub lake: PathBuf,
    #[serde(default = "default_artifact_dir")]
    pub artifact_dir: PathBuf,
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub tools: ToolsConfig,
    #[serde(default)]
    pub executor: ExecutorConfig,
    #[serde(default)]
    pub control: ControlConfig,
}

fn default_artifact_dir() -> PathBuf {
    PathBuf::from("artifacts")
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    /// Parses TOML text, resolving relative paths against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<config>"),
            message: e.to_string(),
        })?;
        cfg.lake = base.join(&cfg.lake);
        cfg.artifact_dir = base.join(&cfg.artifact_dir);
        cfg.fixtures = cfg.fixtures.map(|f| base.join(f));
        Ok(cfg)
    }

    /// Checks mode requirements without touching the network or the lake.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.executor
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match self.llm.mode {
            LlmMode::Scripted => match &self.fixtures {
                None => return Err(ConfigError::Invalid("scripted mode requires a fixtures directory".into())),
                Some(dir) if !dir.is_dir() => {
                    return Err(ConfigError::Invalid(format!("fixtures directory {} does not exist", dir.display())))
                }
                Some(_) => {}
            },
            LlmMode::Http => {
                if self.llm.base_url.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigError::Invalid("http mode requires llm.base_url".into()));
                }
                if self.llm.model.as_deref().is_none_or(str::is_empty) {
                    return Err(ConfigError::Invalid("http mode requires llm.model".into()));
                }
                let var = self
                    .llm
                    .api_key_env
                    .as_deref()
                    .ok_or_else(|| ConfigError::Invalid("http mode requires llm.api_key_env".into()))?;
                if std::env::var_os(var).is_none() {
                    return Err(ConfigError::MissingEnv(var.to_string()));
                }
            }
        }
        let needs_sandbox = self.tools.prep_mode == PrepMode::Script || self.tools.renderer == RendererKind::Sandbox;
        if needs_sandbox && self.tools.sandbox_url.is_none() {
            return Err(ConfigError::Invalid(
                "tools.sandbox_url is required for script preparation or sandbox rendering".into(),
            ));
        }
        if self.tools.timeout_s == 0 {
            return Err(ConfigError::Invalid("tools.timeout_s must be positive".into()));
        }
        Ok(())
    }

    /// Validates and assembles a ready engine.
    pub fn build_engine(&self) -> Result<Engine, ConfigError> {
        self.validate()?;
        let lake = Arc::new(DataLake::open_manifest_file(&self.lake)?);
        let backend_err = |component: &'static str| move |e: &dyn std::fmt::Display| ConfigError::Backend {
            component,
            message: e.to_string(),
        };

        let backend: Arc<dyn LlmBackend> = match self.llm.mode {
            LlmMode::Scripted => {
                let dir = self.fixtures.as_deref().expect("validated");
                Arc::new(ScriptedBackend::from_dir(dir).map_err(|e| backend_err("scripted model")(&e))?)
            }
            LlmMode::Http => Arc::new(
                HttpBackend::new(HttpBackendConfig {
                    base_url: self.llm.base_url.clone().unwrap_or_default(),
                    model: self.llm.model.clone().unwrap_or_default(),
                    api_key_env: self.llm.api_key_env.clone(),
                    max_retries: self.llm.max_retries,
                    backoff_ms: self.llm.backoff_ms,
                    timeout_s: self.llm.timeout_s,
                })
                .map_err(|e| backend_err("model endpoint")(&e))?,
            ),
        };
        let gateway = Arc::new(Gateway::new(backend, self.llm.rates));

        let timeout = Duration::from_secs(self.tools.timeout_s);
        let vqa: Arc<dyn VqaClient> = match &self.tools.vqa_url {
            Some(url) => Arc::new(
                HttpVqaClient::new(url.clone(), self.tools.vqa_mode, timeout).map_err(|e| backend_err("VQA client")(&e))?,
            ),
            None => {
                let table = match self.fixtures.as_deref().map(|d| d.join("vqa.json")) {
                    Some(path) if path.is_file() => VqaTable::load(&path).map_err(|e| backend_err("VQA fixtures")(&e))?,
                    _ => {
                        tracing::warn!("no VQA service or fixture table configured; image questions will fail");
                        VqaTable::default()
                    }
                };
                Arc::new(ScriptedVqa::new(table))
            }
        };
        let sandbox = self
            .tools
            .sandbox_url
            .as_deref()
            .map(|url| SandboxClient::new(url, timeout).map(Arc::new))
            .transpose()
            .map_err(|e| backend_err("sandbox client")(&e))?;
        let renderer: Arc<dyn ChartRenderer> = match (self.tools.renderer, &sandbox) {
            (RendererKind::Sandbox, Some(client)) => Arc::new(SandboxRenderer::new(Arc::clone(client))),
            _ => Arc::new(StubRenderer),
        };
        let registry = builtin_registry(&BuiltinBackends {
            vqa,
            prep_mode: self.tools.prep_mode,
            sandbox,
            renderer,
        })
        .map_err(|e| backend_err("tool registry")(&e))?;

        Ok(Engine {
            registry: Arc::new(registry),
            gateway,
            lake,
            executor: self.executor,
            control: self.control.clone(),
            artifact_dir: self.artifact_dir.clone(),
        })
    }
}
