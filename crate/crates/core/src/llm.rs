//! Model backends. Every model call in the crate goes through [`LlmBackend`].

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Paraphrase,
    DynamicClarify,
    Summarize,
    Sqlgen,
    Slu,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Paraphrase => "paraphrase",
            Stage::DynamicClarify => "dynamic_clarify",
            Stage::Summarize => "summarize",
            Stage::Sqlgen => "sqlgen",
            Stage::Slu => "slu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sampling seed; callers that retry bump it so repeated calls differ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub stage: Stage,
    pub messages: Vec<Message>,
    pub params: ChatParams,
}

impl ChatRequest {
    pub fn new(stage: Stage, messages: Vec<Message>) -> Self {
        assert!(!messages.is_empty(), "chat request without messages");
        Self {
            stage,
            messages,
            params: ChatParams::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.params.seed = Some(seed);
        self
    }

    /// Content of the last user message, or the last message.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .or(self.messages.last())
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Text the mock matchers run against.
    pub fn digest(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("quota or rate limit: {0}")]
    Quota(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("missing credential: environment variable {0} is not set")]
    Credential(String),
}

impl LlmError {
    fn is_transient(&self) -> bool {
        match self {
            LlmError::Transport(_) | LlmError::Timeout(_) => true,
            LlmError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Matcher {
    Any,
    Contains(String),
    Regex(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub stage: Stage,
    pub matcher: Matcher,
    pub response: String,
}

/// Deterministic scripted backend. The first rule whose stage and matcher
/// accept the request supplies the response; otherwise the last user
/// message is echoed back.
#[derive(Debug)]
pub struct ScriptedMock {
    rules: Vec<(MockRule, Option<Regex>)>,
}

impl ScriptedMock {
    pub fn new(rules: Vec<MockRule>) -> Result<Self, regex::Error> {
        let rules = rules
            .into_iter()
            .map(|r| {
                let re = match &r.matcher {
                    Matcher::Regex(p) => Some(Regex::new(p)?),
                    _ => None,
                };
                Ok((r, re))
            })
            .collect::<Result<_, regex::Error>>()?;
        Ok(Self { rules })
    }

    pub fn echo() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let rules: Vec<MockRule> = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::new(rules).map_err(|e| e.to_string())
    }
}

impl LlmBackend for ScriptedMock {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let digest = req.digest();
        for (rule, re) in &self.rules {
            if rule.stage != req.stage {
                continue;
            }
            let hit = match &rule.matcher {
                Matcher::Any => true,
                Matcher::Contains(s) => digest.contains(s.as_str()),
                Matcher::Regex(_) => re.as_ref().is_some_and(|re| re.is_match(&digest)),
            };
            if hit {
                return Ok(rule.response.clone());
            }
        }
        Ok(req.last_user().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Chat-completions URL.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_deadline")]
    pub deadline_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_key_env() -> String {
    "TABCLAR_API_KEY".into()
}
fn default_deadline() -> u64 {
    30_000
}
fn default_in_flight() -> usize {
    8
}
fn default_retries() -> u32 {
    2
}
fn default_backoff() -> u64 {
    250
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_key_env(),
            deadline_ms: default_deadline(),
            max_in_flight: default_in_flight(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
        }
    }
}

struct Gate {
    busy: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut busy = self.busy.lock().unwrap();
        while *busy >= self.limit {
            busy = self.freed.wait(busy).unwrap();
        }
        *busy += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// OpenAI-style chat-completion client.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    gate: Gate,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl HttpBackend {
    /// The key is read from the configured environment variable; a missing
    /// key is tolerated for local servers that do not check it.
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.deadline_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let gate = Gate {
            busy: Mutex::new(0),
            freed: Condvar::new(),
            limit: config.max_in_flight.max(1),
        };
        Self {
            config,
            agent,
            api_key,
            gate,
        }
    }

    fn once(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let body = WireRequest {
            model: &self.config.model,
            messages: &req.messages,
            temperature: req.params.temperature,
            max_tokens: req.params.max_tokens,
            seed: req.params.seed,
        };
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let deadline = Duration::from_millis(self.config.deadline_ms);
        let mut resp = call.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout(deadline),
            other => LlmError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if status == 429 {
            return Err(LlmError::Quota(resp.body_mut().read_to_string().unwrap_or_default()));
        }
        if status >= 400 {
            return Err(LlmError::Status {
                status,
                body: resp.body_mut().read_to_string().unwrap_or_default(),
            });
        }
        let wire: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Malformed(e.to_string()))?;
        wire.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("no choices".into()))
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let _slot = self.gate.enter();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.once(req) {
                Err(e) if e.is_transient() && attempt < self.config.retries => {
                    attempt += 1;
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                other => return other,
            }
        }
    }
}

/// Backend selection as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Scripted mock; no rules means pure echo.
    Mock {
        #[serde(default)]
        rules: Vec<MockRule>,
    },
    Http(HttpConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock { rules: Vec::new() }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<std::sync::Arc<dyn LlmBackend>, String> {
        Ok(match self {
            BackendConfig::Mock { rules } => {
                std::sync::Arc::new(ScriptedMock::new(rules.clone()).map_err(|e| e.to_string())?)
            }
            BackendConfig::Http(c) => std::sync::Arc::new(HttpBackend::new(c.clone())),
        })
    }
}

/// Strips a Markdown code fence if the model wrapped its answer in one.
pub fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let body = rest.split_once('\n').map(|(_, b)| b).unwrap_or("");
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Prompt assets bundled with the crate.
pub mod prompts {
    pub const PARAPHRASE: &str = include_str!("../assets/prompts/paraphrase.txt");
    pub const ABBREVIATE: &str = include_str!("../assets/prompts/abbreviate.txt");
    pub const DYNAMIC_CLARIFY: &str = include_str!("../assets/prompts/dynamic_clarify.txt");
    pub const SUMMARIZE: &str = include_str!("../assets/prompts/summarize.txt");
    pub const SQLGEN: &str = include_str!("../assets/prompts/sqlgen.txt");
    pub const SLU: &str = include_str!("../assets/prompts/slu.txt");
    pub const SCOPE: &str = include_str!("../assets/prompts/scope.txt");

    /// Replaces `{{name}}` markers.
    pub fn fill(template: &str, vars: &[(&str, &str)]) -> String {
        let mut out = template.to_string();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }
}
