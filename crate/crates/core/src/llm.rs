//! Language-model port: a strict scripted backend for tests and an
//! OpenAI-compatible HTTP client.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("scenario exhausted, no step left for prompt {prompt}")]
    ScriptExhausted { prompt: String },
    #[error("unexpected prompt {got} at scenario step {step}, script expects {expected}")]
    UnexpectedCall { step: usize, expected: String, got: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed completion: {0}")]
    Malformed(String),
    #[error("scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            max_tokens: 16_384,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    /// Template name, e.g. `solver.patch`; the scripted backend keys on it.
    pub prompt_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub user: String,
    pub decoding: Decoding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Scripted,
    HttpCompatible,
}

pub trait LlmPort: Send + Sync {
    fn backend(&self) -> Backend;
    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError>;
}

/// One canned reply. `prompt` matches the template name exactly, or as a
/// prefix when it ends in `*`. A step with `fail = true` simulates a
/// transport error instead of replying.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub prompt: String,
    #[serde(default)]
    pub completion: String,
    #[serde(default)]
    pub fail: bool,
}

impl ScriptStep {
    pub fn new(prompt: impl Into<String>, completion: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            completion: completion.into(),
            fail: false,
        }
    }

    pub fn matches(&self, name: &str) -> bool {
        match self.prompt.strip_suffix('*') {
            Some(prefix) => name.starts_with(prefix),
            None => self.prompt == name,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub steps: Vec<ScriptStep>,
}

impl Scenario {
    /// JSON (`{"steps": [...]}`) or TOML (`[[steps]]`), chosen by content.
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| LlmError::Scenario(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| LlmError::Scenario(e.to_string()))
        }
    }
}

/// Replays a scenario in order. Any call that does not match the next step
/// is an error, so tests fail loudly on unexpected prompts.
#[derive(Debug)]
pub struct ScriptedLlm {
    steps: Vec<ScriptStep>,
    cursor: Mutex<usize>,
}

impl ScriptedLlm {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            steps: scenario.steps,
            cursor: Mutex::new(0),
        }
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("cursor lock")
    }

    pub fn remaining(&self) -> usize {
        self.steps.len() - self.consumed()
    }
}

impl LlmPort for ScriptedLlm {
    fn backend(&self) -> Backend {
        Backend::Scripted
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let mut cur = self.cursor.lock().expect("cursor lock");
        let step = self.steps.get(*cur).ok_or_else(|| LlmError::ScriptExhausted {
            prompt: req.prompt_name.clone(),
        })?;
        if !step.matches(&req.prompt_name) {
            return Err(LlmError::UnexpectedCall {
                step: *cur,
                expected: step.prompt.clone(),
                got: req.prompt_name.clone(),
            });
        }
        *cur += 1;
        if step.fail {
            return Err(LlmError::Transport(format!("scripted failure at step {}", *cur - 1)));
        }
        Ok(step.completion.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
}

fn default_timeout() -> u64 {
    600
}

pub struct HttpLlm {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

impl HttpLlm {
    pub fn new(cfg: HttpConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_seconds))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self { cfg, client })
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    content: Option<String>,
}

impl LlmPort for HttpLlm {
    fn backend(&self) -> Backend {
        Backend::HttpCompatible
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let mut messages = Vec::new();
        if let Some(sys) = &req.system {
            messages.push(ChatMessage {
                role: "system",
                content: sys,
            });
        }
        messages.push(ChatMessage {
            role: "user",
            content: &req.user,
        });
        let body = ChatRequest {
            model: &self.cfg.model,
            messages,
            temperature: req.decoding.temperature,
            max_tokens: req.decoding.max_tokens,
        };
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let mut call = self.client.post(url).json(&body);
        if let Some(var) = &self.cfg.api_key_env {
            let key = std::env::var(var).map_err(|_| LlmError::Transport(format!("{var} is not set")))?;
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(LlmError::Transport(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| LlmError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("response has no message content".into()))
    }
}

fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = rest.split_once('\n').map_or("", |(_, b)| b);
        return body.trim_end().strip_suffix("```").unwrap_or(body).trim();
    }
    t
}

/// Parse a JSON object reply, tolerating a code fence or prose around it.
pub fn extract_json(text: &str) -> Result<serde_json::Value, LlmError> {
    let t = strip_fence(text);
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(t) {
        if v.is_object() {
            return Ok(v);
        }
    }
    let (start, end) = (t.find('{'), t.rfind('}'));
    if let (Some(s), Some(e)) = (start, end) {
        if s < e {
            if let Ok(v) = serde_json::from_str::<serde_json::Value>(&t[s..=e]) {
                if v.is_object() {
                    return Ok(v);
                }
            }
        }
    }
    Err(LlmError::Malformed(format!(
        "no JSON object in reply: {}",
        t.chars().take(120).collect::<String>()
    )))
}

/// Source code from a reply: the last fenced block if there is one,
/// otherwise the whole reply.
pub fn extract_code(text: &str) -> String {
    let mut last = None;
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        let Some(nl) = after.find('\n') else { break };
        let body = &after[nl + 1..];
        let Some(close) = body.find("```") else { break };
        last = Some(body[..close].to_string());
        rest = &body[close + 3..];
    }
    let code = last.unwrap_or_else(|| text.trim().to_string());
    if code.ends_with('\n') {
        code
    } else {
        code + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(name: &str) -> LlmRequest {
        LlmRequest {
            prompt_name: name.into(),
            system: None,
            user: String::new(),
            decoding: Decoding::default(),
        }
    }

    #[test]
    fn scripted_is_strict_and_ordered() {
        let llm = ScriptedLlm::new(Scenario {
            steps: vec![ScriptStep::new("planner.*", "a"), ScriptStep::new("solver.initial", "b")],
        });
        assert_eq!(llm.complete(&req("planner.abstract_problem")).unwrap(), "a");
        assert!(matches!(
            llm.complete(&req("oracle.generator")),
            Err(LlmError::UnexpectedCall { step: 1, .. })
        ));
        assert_eq!(llm.complete(&req("solver.initial")).unwrap(), "b");
        assert!(matches!(llm.complete(&req("x")), Err(LlmError::ScriptExhausted { .. })));
        assert_eq!(llm.remaining(), 0);
    }

    #[test]
    fn scenario_formats() {
        let j = Scenario::parse(r#"{"steps":[{"prompt":"a","completion":"x"}]}"#).unwrap();
        let t = Scenario::parse("[[steps]]\nprompt = \"a\"\ncompletion = \"x\"\n").unwrap();
        assert_eq!(j, t);
    }

    #[test]
    fn json_and_code_extraction() {
        assert_eq!(extract_json("```json\n{\"a\":1}\n```").unwrap()["a"], 1);
        assert_eq!(extract_json("sure: {\"a\":2} done").unwrap()["a"], 2);
        assert!(extract_json("nothing here").is_err());
        let reply = "### Design\nx\n### Solution\n```cpp\nint main(){}\n```\n";
        assert_eq!(extract_code(reply), "int main(){}\n");
        assert_eq!(extract_code("int main(){}"), "int main(){}\n");
    }
}
