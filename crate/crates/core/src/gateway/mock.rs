use std::path::Path;
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{estimate_tokens, ChatProvider, ChatRequest, ProviderError, ProviderReply, TokenLogprob};

/// Token boundaries used by the mock: word runs, whitespace runs, and single
/// punctuation characters.
pub fn mock_tokenize(text: &str) -> Vec<&str> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\w+|\s+|[^\w\s]").unwrap());
    re.find_iter(text).map(|m| m.as_str()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matcher {
    Contains(String),
    Regex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockFailure {
    Auth,
    RateLimited,
    Transient,
    Malformed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockResponse {
    #[serde(default)]
    pub text: String,
    /// Explicit tokens; overrides tokenizing `text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenLogprob>>,
    /// Logprobs aligned with the tokenization of `text`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<f64>,
}

impl MockResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

/// One line of a mock script. The first entry whose matchers all accept the
/// request answers it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<Matcher>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<Matcher>,
    /// Matches when the request temperature rounds to this value (0.01 steps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<MockResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<MockFailure>,
    /// Number of uses before the entry is exhausted; unlimited when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub entries: Vec<MockScriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<MockResponse>,
}

pub type MockEntry = MockScriptEntry;

type Responder = dyn Fn(&ChatRequest) -> Result<MockResponse, ProviderError> + Send + Sync;

struct Compiled {
    entry: MockScriptEntry,
    system: Option<Regex>,
    user: Option<Regex>,
}

fn compile(m: &Option<Matcher>) -> Result<Option<Regex>, String> {
    match m {
        None => Ok(None),
        Some(Matcher::Contains(s)) => Ok(Some(Regex::new(&regex::escape(s)).unwrap())),
        Some(Matcher::Regex(s)) => Regex::new(s).map(Some).map_err(|e| e.to_string()),
    }
}

/// Deterministic provider driven by a script or a closure.
pub struct MockProvider {
    entries: Vec<Compiled>,
    uses: Mutex<Vec<u32>>,
    default: Option<MockResponse>,
    responder: Option<Box<Responder>>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Result<Self, String> {
        let mut entries = Vec::new();
        for e in script.entries {
            if e.response.is_none() && e.error.is_none() {
                return Err(format!("mock entry {:?} has neither response nor error", e.key));
            }
            entries.push(Compiled {
                system: compile(&e.system)?,
                user: compile(&e.user)?,
                entry: e,
            });
        }
        Ok(Self {
            uses: Mutex::new(vec![0; entries.len()]),
            entries,
            default: script.default,
            responder: None,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let script: MockScript = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::new(script)
    }

    pub fn from_fn(f: impl Fn(&ChatRequest) -> Result<MockResponse, ProviderError> + Send + Sync + 'static) -> Self {
        Self {
            entries: Vec::new(),
            uses: Mutex::new(Vec::new()),
            default: None,
            responder: Some(Box::new(f)),
        }
    }

    fn lookup(&self, req: &ChatRequest) -> Result<MockResponse, ProviderError> {
        if let Some(f) = &self.responder {
            return f(req);
        }
        let mut uses = self.uses.lock().unwrap();
        for (i, c) in self.entries.iter().enumerate() {
            if c.entry.times.is_some_and(|t| uses[i] >= t) {
                continue;
            }
            if c.system.as_ref().is_some_and(|r| !r.is_match(&req.system))
                || c.user.as_ref().is_some_and(|r| !r.is_match(&req.user))
                || c.entry.temperature.is_some_and(|t| ((t - req.temperature) * 100.0).round() != 0.0)
            {
                continue;
            }
            uses[i] += 1;
            if let Some(err) = c.entry.error {
                let msg = format!("scripted failure ({})", c.entry.key.as_deref().unwrap_or("unnamed"));
                return Err(match err {
                    MockFailure::Auth => ProviderError::Auth(msg),
                    MockFailure::RateLimited => ProviderError::RateLimited(msg),
                    MockFailure::Transient => ProviderError::Transient(msg),
                    MockFailure::Malformed => ProviderError::Malformed(msg),
                });
            }
            return Ok(c.entry.response.clone().expect("validated"));
        }
        self.default
            .clone()
            .ok_or_else(|| ProviderError::Malformed("no mock entry matches the request".into()))
    }
}

impl ChatProvider for MockProvider {
    fn send(&self, req: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let resp = self.lookup(req)?;
        let tokens = match (resp.tokens, resp.logprobs) {
            (Some(t), _) => t,
            (None, lps) => mock_tokenize(&resp.text)
                .into_iter()
                .enumerate()
                .map(|(i, tok)| TokenLogprob {
                    token: tok.to_string(),
                    logprob: lps.as_ref().and_then(|v| v.get(i).copied()).unwrap_or(-0.05),
                })
                .collect(),
        };
        let text = if resp.text.is_empty() {
            tokens.iter().map(|t| t.token.as_str()).collect()
        } else {
            resp.text
        };
        let input = estimate_tokens(&req.system) + estimate_tokens(&req.user);
        let output = tokens.iter().filter(|t| !t.token.trim().is_empty()).count() as u64;
        Ok(ProviderReply {
            text,
            token_logprobs: req.want_logprobs.then_some(tokens),
            input_tokens: Some(input),
            output_tokens: Some(output),
            simulated_latency: Some(resp.latency.unwrap_or(0.001 * (input + output) as f64 + 0.01)),
        })
    }
}
