//! Agent-core access: prompt templates, the completion contract, usage accounting,
//! and the planner / replanner / decision calls built on top of it.

mod decision;
mod http;
mod prompts;
mod scripted;

use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tools::{ToolDescriptor, ToolMenu};

pub use decision::{parse_decision, Decision, FinalAnswer, Inference, ParsedDecision, FINAL_ANSWER_KEYS};
pub use http::{HttpBackend, HttpBackendConfig};
pub use prompts::{PromptLibrary, Template, TemplateId, Vars};
pub use scripted::{fingerprint, Condition, Script, ScriptEntry, ScriptResponse, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_s: f64,
    pub cost_usd: f64,
    /// Set when token counts were estimated instead of reported by the endpoint.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub approximate: bool,
}

impl UsageRecord {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: &UsageRecord) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.wall_time_s += other.wall_time_s;
        self.cost_usd += other.cost_usd;
        self.approximate |= other.approximate;
    }

    pub fn without_timing(&self) -> UsageRecord {
        UsageRecord {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Prices in USD per 1000 tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCard {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl RateCard {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        prompt_tokens as f64 * self.input_per_1k / 1000.0
            + completion_tokens as f64 * self.output_per_1k / 1000.0
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum LlmError {
    #[error("missing template variable '{0}'")]
    MissingVariable(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited after {retries} retries")]
    RateLimit { retries: u32 },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("no scripted response for template '{template}' (fingerprint {fingerprint}, vars [{}])", vars.join(", "))]
    ScriptMiss {
        template: String,
        fingerprint: String,
        vars: Vec<String>,
    },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("unusable response: {0}")]
    BadResponse(String),
}

/// What a backend sees for one completion.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub template: TemplateId,
    pub vars: &'a Vars,
    pub messages: &'a [Message],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub retry_count: u32,
}

#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn complete(&self, request: CompletionRequest<'_>) -> Result<BackendReply, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub usage: UsageRecord,
    pub retry_count: u32,
}

/// One completion as recorded in a run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCallRecord {
    pub template: TemplateId,
    pub usage: UsageRecord,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub retry_count: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl LlmCallRecord {
    pub fn from_response(template: TemplateId, r: &LlmResponse) -> Self {
        Self {
            template,
            usage: r.usage.clone(),
            retry_count: r.retry_count,
        }
    }
}

/// Whitespace-delimited token estimate used when an endpoint reports no usage.
pub fn approximate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Inputs of a replanning call.
#[derive(Debug, Clone)]
pub struct ReplanInput<'a> {
    pub question: &'a str,
    pub previous_plan: &'a str,
    pub kept_results: &'a str,
    pub reason: &'a str,
    pub next_id: u32,
}

pub struct Gateway {
    backend: Arc<dyn LlmBackend>,
    prompts: PromptLibrary,
    rates: RateCard,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("rates", &self.rates).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn LlmBackend>, rates: RateCard) -> Self {
        Self {
            backend,
            prompts: PromptLibrary::default(),
            rates,
        }
    }

    pub fn prompts(&self) -> &PromptLibrary {
        &self.prompts
    }

    pub fn rates(&self) -> RateCard {
        self.rates
    }

    pub fn render(&self, template: TemplateId, vars: &Vars) -> Result<Vec<Message>, LlmError> {
        self.prompts.render(template, vars)
    }

    pub async fn complete(&self, template: TemplateId, vars: &Vars) -> Result<LlmResponse, LlmError> {
        let messages = self.prompts.render(template, vars)?;
        let started = Instant::now();
        let reply = self
            .backend
            .complete(CompletionRequest {
                template,
                vars,
                messages: &messages,
            })
            .await?;
        let wall_time_s = started.elapsed().as_secs_f64();
        let approximate = reply.prompt_tokens.is_none() || reply.completion_tokens.is_none();
        let prompt_tokens = reply.prompt_tokens.unwrap_or_else(|| {
            messages.iter().map(|m| approximate_tokens(&m.content)).sum()
        });
        let completion_tokens = reply
            .completion_tokens
            .unwrap_or_else(|| approximate_tokens(&reply.text));
        Ok(LlmResponse {
            usage: UsageRecord {
                prompt_tokens,
                completion_tokens,
                wall_time_s,
                cost_usd: self.rates.cost(prompt_tokens, completion_tokens),
                approximate,
            },
            text: reply.text,
            retry_count: reply.retry_count,
        })
    }

    fn menu(tools: &[ToolDescriptor]) -> Result<ToolMenu, LlmError> {
        ToolMenu::from_descriptors(tools)
            .ok_or_else(|| LlmError::Precondition("tool catalogue is empty".into()))
    }

    /// The single planning call for a question. `state` carries the question and schema.
    pub async fn plan(
        &self,
        state: &str,
        tools: &[ToolDescriptor],
        business_rules: &str,
    ) -> Result<LlmResponse, LlmError> {
        let menu = Self::menu(tools)?;
        let mut vars = menu_vars(&menu);
        vars.insert("state".into(), state.to_string());
        vars.insert("business_rules".into(), business_rules.to_string());
        self.complete(TemplateId::Planner, &vars).await
    }

    pub async fn replan(&self, input: &ReplanInput<'_>, tools: &[ToolDescriptor]) -> Result<LlmResponse, LlmError> {
        let menu = Self::menu(tools)?;
        let mut vars = menu_vars(&menu);
        vars.insert("question".into(), input.question.to_string());
        vars.insert("previous_plan".into(), input.previous_plan.to_string());
        vars.insert("kept_results".into(), input.kept_results.to_string());
        vars.insert("reason".into(), input.reason.to_string());
        vars.insert("next_id".into(), input.next_id.to_string());
        self.complete(TemplateId::Replanner, &vars).await
    }

    pub async fn decide(&self, state: &str) -> Result<(ParsedDecision, LlmResponse), LlmError> {
        let mut vars = Vars::new();
        vars.insert("state".into(), state.to_string());
        let response = self.complete(TemplateId::Decision, &vars).await?;
        Ok((parse_decision(&response.text), response))
    }
}

fn menu_vars(menu: &ToolMenu) -> Vars {
    let mut vars = Vars::new();
    vars.insert("tool_names".into(), menu.tool_names.clone());
    vars.insert("tool_descriptions".into(), menu.tool_descriptions.clone());
    vars.insert("num_tools".into(), menu.num_tools.to_string());
    vars
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::{ArgSpec, ValueType};

    fn tools() -> Vec<ToolDescriptor> {
        vec![ToolDescriptor::new(
            "text2SQL",
            "Runs SQL.",
            vec![ArgSpec::required("problem", ValueType::Text)],
            ValueType::Structured,
        )]
    }

    #[test]
    fn rate_card_cost() {
        let rates = RateCard {
            input_per_1k: 0.005,
            output_per_1k: 0.015,
        };
        assert!((rates.cost(1000, 2000) - 0.035).abs() < 1e-12);
    }

    #[tokio::test]
    async fn heuristic_usage_is_flagged() {
        let script = Script::from_json(r#"{"entries": [{"template": "planner", "responses": ["1. join()"]}]}"#).unwrap();
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(script)), RateCard::default());
        let r = gw.plan("Question: q", &tools(), "").await.unwrap();
        assert!(r.usage.approximate);
        assert_eq!(r.usage.completion_tokens, 2);
        assert!(r.usage.prompt_tokens > 100);
    }

    #[tokio::test]
    async fn empty_catalogue_is_rejected() {
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(Script::default())), RateCard::default());
        assert!(matches!(gw.plan("q", &[], "").await, Err(LlmError::Precondition(_))));
    }

    #[tokio::test]
    async fn declared_usage_and_cost() {
        let script = Script::from_json(
            r#"{"entries": [{"template": "decision", "responses": [{"text": "Thought: t\nAction: Replan(more)", "prompt_tokens": 100, "completion_tokens": 50}]}]}"#,
        )
        .unwrap();
        let rates = RateCard {
            input_per_1k: 1.0,
            output_per_1k: 2.0,
        };
        let gw = Gateway::new(Arc::new(ScriptedBackend::new(script)), rates);
        let (decision, r) = gw.decide("state").await.unwrap();
        assert_eq!(decision, ParsedDecision::Replan { thought: "t".into(), reason: "more".into() });
        assert_eq!((r.usage.prompt_tokens, r.usage.completion_tokens), (100, 50));
        assert!(!r.usage.approximate);
        assert_eq!(r.usage.cost_usd, rates.cost(100, 50));
    }
}
