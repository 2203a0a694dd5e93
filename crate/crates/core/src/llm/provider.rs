use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::cancel::CancelToken;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// One model call: the chain step that makes it and the full message list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub step: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// Content of the last user message.
    pub fn last_user(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("provider did not answer within {0:?}")]
    Timeout(Duration),
    #[error("provider returned HTTP {code}: {message}")]
    Status { code: u16, message: String },
    #[error("script has no entry left for call {call} (step `{step}`)")]
    Exhausted { call: usize, step: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("call cancelled")]
    Cancelled,
}

/// Something that turns a chat request into raw model text.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest, cancel: &CancelToken) -> Result<String, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete(&self, request: &ChatRequest, cancel: &CancelToken) -> Result<String, ProviderError> {
        (**self).complete(request, cancel)
    }
}

pub const SCRIPT_SCHEMA: &str = "cocobo-script/v1";

/// Conditions an entry places on a call. All given conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptMatch {
    /// Substring of the last user message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Chain step name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<String>,
    /// 1-based ordinal of the call on this provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default, rename = "match")]
    pub when: ScriptMatch,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delay_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub schema: String,
    pub entries: Vec<ScriptEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid script: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported script schema `{0}`")]
    Schema(String),
}

impl Script {
    pub fn parse(text: &str) -> Result<Script, ScriptError> {
        let script: Script = serde_json::from_str(text)?;
        if script.schema != SCRIPT_SCHEMA {
            return Err(ScriptError::Schema(script.schema));
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Script, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Script::parse(&text)
    }

    /// Entries answering any call, in order.
    pub fn sequence<I, S>(responses: I) -> Script
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Script {
            schema: SCRIPT_SCHEMA.to_string(),
            entries: responses
                .into_iter()
                .map(|r| ScriptEntry {
                    when: ScriptMatch::default(),
                    response: r.into(),
                    delay_ms: None,
                })
                .collect(),
        }
    }
}

struct ScriptState {
    used: Vec<bool>,
    requests: Vec<ChatRequest>,
}

/// Deterministic provider: each call takes the first unused entry whose
/// conditions match. Every entry answers at most once.
pub struct ScriptedProvider {
    entries: Vec<ScriptEntry>,
    timeout: Option<Duration>,
    state: Mutex<ScriptState>,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        ScriptedProvider {
            state: Mutex::new(ScriptState {
                used: vec![false; script.entries.len()],
                requests: Vec::new(),
            }),
            entries: script.entries,
            timeout: None,
        }
    }

    /// Entry delays longer than `timeout` fail like a slow live call.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    /// Every request received so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().requests.clone()
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().used.iter().filter(|u| !**u).count()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest, cancel: &CancelToken) -> Result<String, ProviderError> {
        let entry = {
            let mut st = self.state.lock();
            st.requests.push(request.clone());
            let call = st.requests.len();
            let found = self.entries.iter().enumerate().position(|(i, e)| {
                !st.used[i]
                    && e.when.call.is_none_or(|c| c == call)
                    && e.when.step.as_deref().is_none_or(|s| s == request.step)
                    && e.when
                        .contains
                        .as_deref()
                        .is_none_or(|s| request.last_user().contains(s))
            });
            let Some(i) = found else {
                return Err(ProviderError::Exhausted {
                    call,
                    step: request.step.clone(),
                });
            };
            st.used[i] = true;
            &self.entries[i]
        };
        if let Some(ms) = entry.delay_ms {
            let delay = Duration::from_millis(ms);
            let wait = self.timeout.map_or(delay, |t| t.min(delay));
            sleep_cancellable(wait, cancel)?;
            if wait < delay {
                return Err(ProviderError::Timeout(wait));
            }
        }
        if cancel.is_cancelled() {
            return Err(ProviderError::Cancelled);
        }
        Ok(entry.response.clone())
    }
}

const POLL: Duration = Duration::from_millis(10);

fn sleep_cancellable(total: Duration, cancel: &CancelToken) -> Result<(), ProviderError> {
    let deadline = Instant::now() + total;
    loop {
        if cancel.is_cancelled() {
            return Err(ProviderError::Cancelled);
        }
        let now = Instant::now();
        if now >= deadline {
            return Ok(());
        }
        std::thread::sleep(POLL.min(deadline - now));
    }
}

/// Chat-completion HTTP adapter: POSTs `{model, messages, temperature}` to
/// `{base_url}/chat/completions` and returns `choices[0].message.content`.
pub struct LiveProvider {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout: Duration,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f32,
}

impl LiveProvider {
    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn call(
        endpoint: String,
        token: Option<String>,
        body: serde_json::Value,
        timeout: Duration,
    ) -> Result<String, ProviderError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(&endpoint).header("Content-Type", "application/json");
        if let Some(token) = token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| map_ureq(e, timeout))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| map_ureq(e, timeout))?;
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status {
                code: status,
                message: text,
            });
        }
        let v: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Transport(format!("invalid response JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Transport("response has no choices[0].message.content".into()))
    }
}

fn map_ureq(e: ureq::Error, timeout: Duration) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout(timeout),
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout(timeout),
        other => ProviderError::Transport(other.to_string()),
    }
}

impl Provider for LiveProvider {
    fn complete(&self, request: &ChatRequest, cancel: &CancelToken) -> Result<String, ProviderError> {
        let body = serde_json::to_value(CompletionBody {
            model: &self.model,
            messages: &request.messages,
            temperature: 0.0,
        })
        .expect("serializable");
        let token = std::env::var(&self.api_key_env).ok();
        let (tx, rx) = crossbeam_channel::bounded(1);
        let endpoint = self.endpoint();
        let timeout = self.timeout;
        std::thread::spawn(move || {
            let _ = tx.send(LiveProvider::call(endpoint, token, body, timeout));
        });
        let deadline = Instant::now() + timeout;
        loop {
            if cancel.is_cancelled() {
                return Err(ProviderError::Cancelled);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(ProviderError::Timeout(timeout));
            }
            match rx.recv_timeout(POLL.min(deadline - now)) {
                Ok(result) => return result,
                Err(crossbeam_channel::RecvTimeoutError::Timeout) => continue,
                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => {
                    return Err(ProviderError::Transport("request thread died".into()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ProviderKind {
    Scripted {
        script: PathBuf,
    },
    #[serde(rename_all = "camelCase")]
    LiveChatCompletion {
        base_url: String,
        model: String,
        #[serde(default = "default_key_env")]
        api_key_env: String,
    },
}

fn default_key_env() -> String {
    "COCOBO_API_KEY".to_string()
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProviderConfig {
    #[serde(flatten)]
    pub kind: ProviderKind,
    #[serde(default = "default_retries")]
    pub max_repair_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("timeout must be a positive number of seconds, got {0}")]
    Timeout(f64),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

impl ProviderConfig {
    pub fn scripted(script: impl Into<PathBuf>) -> Self {
        ProviderConfig {
            kind: ProviderKind::Scripted {
                script: script.into(),
            },
            max_repair_retries: default_retries(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn timeout(&self) -> Result<Duration, ConfigError> {
        if self.timeout_secs.is_finite() && self.timeout_secs > 0.0 {
            Ok(Duration::from_secs_f64(self.timeout_secs))
        } else {
            Err(ConfigError::Timeout(self.timeout_secs))
        }
    }

    /// Build the provider. Relative script paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<Arc<dyn Provider>, ConfigError> {
        let timeout = self.timeout()?;
        Ok(match &self.kind {
            ProviderKind::Scripted { script } => {
                let script = Script::load(&base.join(script))?;
                Arc::new(ScriptedProvider::new(script).with_timeout(timeout))
            }
            ProviderKind::LiveChatCompletion {
                base_url,
                model,
                api_key_env,
            } => Arc::new(LiveProvider {
                base_url: base_url.clone(),
                model: model.clone(),
                api_key_env: api_key_env.clone(),
                timeout,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(step: &str, user: &str) -> ChatRequest {
        ChatRequest {
            step: step.into(),
            messages: vec![
                ChatMessage::new(Role::System, "sys"),
                ChatMessage::new(Role::User, user),
            ],
        }
    }

    #[test]
    fn one_entry_answers_once() {
        let p = ScriptedProvider::new(Script::sequence(["<answer>hi</answer>"]));
        let c = CancelToken::new();
        assert_eq!(p.complete(&req("modify", "x"), &c).unwrap(), "<answer>hi</answer>");
        assert_eq!(
            p.complete(&req("modify", "x"), &c),
            Err(ProviderError::Exhausted { call: 2, step: "modify".into() })
        );
    }

    #[test]
    fn first_unused_match_wins() {
        let script = Script::parse(
            r#"{"schema":"cocobo-script/v1","entries":[
                {"match":{"step":"generate"},"response":"G"},
                {"match":{"contains":"patrol"},"response":"P1"},
                {"match":{"contains":"patrol"},"response":"P2"},
                {"match":{"call":4},"response":"fourth"}
            ]}"#,
        )
        .unwrap();
        let p = ScriptedProvider::new(script);
        let c = CancelToken::new();
        assert_eq!(p.complete(&req("requirements", "patrol please"), &c).unwrap(), "P1");
        assert_eq!(p.complete(&req("generate", "patrol please"), &c).unwrap(), "G");
        assert_eq!(p.complete(&req("requirements", "patrol"), &c).unwrap(), "P2");
        assert_eq!(p.complete(&req("x", "y"), &c).unwrap(), "fourth");
        assert_eq!(p.requests().len(), 4);
        assert_eq!(p.remaining(), 0);
    }

    #[test]
    fn bad_schema() {
        assert!(matches!(
            Script::parse(r#"{"schema":"v0","entries":[]}"#),
            Err(ScriptError::Schema(_))
        ));
    }

    #[test]
    fn delays_time_out_and_cancel() {
        let script = Script {
            schema: SCRIPT_SCHEMA.into(),
            entries: vec![
                ScriptEntry { when: ScriptMatch::default(), response: "a".into(), delay_ms: Some(5_000) },
                ScriptEntry { when: ScriptMatch::default(), response: "b".into(), delay_ms: Some(5_000) },
            ],
        };
        let p = ScriptedProvider::new(script).with_timeout(Duration::from_millis(20));
        let c = CancelToken::new();
        assert!(matches!(p.complete(&req("s", "u"), &c), Err(ProviderError::Timeout(_))));
        c.cancel();
        assert_eq!(p.complete(&req("s", "u"), &c), Err(ProviderError::Cancelled));
    }

    #[test]
    fn config_rejects_zero_timeout() {
        let mut cfg = ProviderConfig::scripted("x.json");
        cfg.timeout_secs = 0.0;
        assert!(matches!(cfg.timeout(), Err(ConfigError::Timeout(_))));
        let json = r#"{"kind":"liveChatCompletion","baseUrl":"http://h","model":"m"}"#;
        let cfg: ProviderConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.max_repair_retries, 2);
    }
}
