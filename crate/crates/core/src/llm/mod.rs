//! Optional chat-completion backed operations, each with an offline fallback.

mod bootstrap;
mod edges;
mod naming;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::embeddings::content_hash;
use crate::error::{Error, Result};

pub use bootstrap::{bootstrap_kg, fallback_kg, FALLBACK_SOURCE};
pub use edges::{llm_propose_edges, parse_edge_proposals, propose_label_edges, NEAREST_CONFIDENCE};
pub use naming::{name_concept, ConceptNamer, TfIdfNamer, STOPWORDS};

pub const LLM_API_KEY_ENV: &str = "RDKG_LLM_API_KEY";

pub(crate) const BOOTSTRAP_PROMPT: &str = include_str!("../../prompts/bootstrap.txt");
pub(crate) const NAME_PROMPT: &str = include_str!("../../prompts/name_concept.txt");
pub(crate) const LABEL_EDGES_PROMPT: &str = include_str!("../../prompts/label_edges.txt");
pub(crate) const PROPOSE_EDGES_PROMPT: &str = include_str!("../../prompts/propose_edges.txt");

const SYSTEM_PROMPT: &str = "You are a careful assistant that answers with a single JSON object.";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LlmClientConfig {
    pub base_url: String,
    pub model: String,
    pub timeout_secs: f64,
    pub retries: u32,
    pub temperature: f64,
    pub backoff_ms: u64,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            timeout_secs: 60.0,
            retries: 2,
            temperature: 0.0,
            backoff_ms: 500,
        }
    }
}

impl LlmClientConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(Error::InvalidConfig(format!("llm timeout must be positive, got {}", self.timeout_secs)));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::InvalidConfig(format!("llm temperature must be >= 0, got {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// A chat-completion backend returning the assistant reply text.
pub trait ChatClient: Send + Sync {
    fn chat(&self, messages: &[Message]) -> Result<String>;
}

/// Sends one user prompt with the shared system message.
pub(crate) fn ask(client: &dyn ChatClient, prompt: &str) -> Result<String> {
    client.chat(&[Message::system(SYSTEM_PROMPT), Message::user(prompt)])
}

/// Substitutes `{{key}}` placeholders.
pub(crate) fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

/// Extracts the first top-level JSON object from a reply, tolerating code fences and chatter.
pub fn reply_json(text: &str) -> Option<Value> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str::<Value>(&text[start..=end]).ok().filter(Value::is_object)
}

pub(crate) fn relations_list(ontology: &crate::kg::Ontology) -> String {
    ontology.relations().collect::<Vec<_>>().join(", ")
}

/// HTTP chat-completion client; replies are cached by prompt hash for the client's lifetime.
pub struct HttpChatClient {
    config: LlmClientConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    cache: Mutex<HashMap<String, String>>,
    debug_dir: Option<PathBuf>,
}

impl HttpChatClient {
    pub fn new(config: LlmClientConfig) -> Result<Self> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into();
        Ok(Self {
            config,
            agent,
            api_key: std::env::var(LLM_API_KEY_ENV).ok(),
            cache: Mutex::new(HashMap::new()),
            debug_dir: None,
        })
    }

    /// Logs every prompt and reply as JSON files under `dir`.
    pub fn with_debug_dir(mut self, dir: PathBuf) -> Self {
        self.debug_dir = Some(dir);
        self
    }

    fn request(&self, body: &Value) -> std::result::Result<String, String> {
        let mut req = self.agent.post(&self.config.base_url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v.pointer("/choices/0/message/content")
            .or_else(|| v.get("content"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| "reply has no message content".to_string())
    }

    fn log_exchange(&self, key: &str, body: &Value, reply: &std::result::Result<String, String>) {
        let Some(dir) = &self.debug_dir else { return };
        let entry = json!({
            "request": body,
            "reply": reply.as_ref().ok(),
            "error": reply.as_ref().err(),
        });
        let path = dir.join(format!("llm-{}.json", &key[..16]));
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, serde_json::to_string_pretty(&entry).unwrap_or_default()));
        if let Err(e) = written {
            log::warn!("could not write prompt log {}: {e}", path.display());
        }
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, messages: &[Message]) -> Result<String> {
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        });
        let key = content_hash(&body.to_string());
        if let Some(hit) = self.cache.lock().expect("llm cache poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let mut delay = self.config.backoff_ms;
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(delay));
                delay *= 2;
            }
            let reply = self.request(&body);
            self.log_exchange(&key, &body, &reply);
            match reply {
                Ok(text) => {
                    self.cache.lock().expect("llm cache poisoned").insert(key, text.clone());
                    return Ok(text);
                }
                Err(e) => {
                    log::warn!("llm request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Llm(last))
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;

    /// Replays canned replies in order; the last one repeats.
    pub struct Scripted {
        replies: Vec<std::result::Result<String, String>>,
        pub seen: Mutex<Vec<String>>,
    }

    impl Scripted {
        pub fn new(replies: &[&str]) -> Self {
            Self {
                replies: replies.iter().map(|r| Ok(r.to_string())).collect(),
                seen: Mutex::new(Vec::new()),
            }
        }

        pub fn failing() -> Self {
            Self {
                replies: vec![Err("offline".into())],
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatClient for Scripted {
        fn chat(&self, messages: &[Message]) -> Result<String> {
            let mut seen = self.seen.lock().unwrap();
            let i = seen.len().min(self.replies.len() - 1);
            seen.push(messages.last().map(|m| m.content.clone()).unwrap_or_default());
            self.replies[i].clone().map_err(Error::Llm)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_json_tolerates_fences() {
        let v = reply_json("Sure!\n```json\n{\"label\": \"A\"}\n```").unwrap();
        assert_eq!(v["label"], "A");
        assert!(reply_json("no json here").is_none());
        assert!(reply_json("} {").is_none());
    }

    #[test]
    fn render_placeholders() {
        assert_eq!(render("a {{x}} b {{x}}", &[("x", "1")]), "a 1 b 1");
    }

    #[test]
    fn prompts_carry_placeholders() {
        assert!(BOOTSTRAP_PROMPT.contains("{{markdown}}") && BOOTSTRAP_PROMPT.contains("{{relations}}"));
        assert!(NAME_PROMPT.contains("{{texts}}"));
        assert!(LABEL_EDGES_PROMPT.contains("{{node}}"));
        assert!(PROPOSE_EDGES_PROMPT.contains("{{edges}}"));
    }

    #[test]
    fn config_validation() {
        assert!(LlmClientConfig::default().validate().is_ok());
        let bad = LlmClientConfig {
            timeout_secs: 0.0,
            ..Default::default()
        };
        assert!(HttpChatClient::new(bad).is_err());
    }
}
