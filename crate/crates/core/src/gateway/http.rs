use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ProviderError, ProviderReply, TokenLogprob};

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpProvider {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpProvider {
    /// `api_key` may be overridden by the `EDITFLOW_API_KEY` environment variable.
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        let api_key = std::env::var("EDITFLOW_API_KEY").ok().filter(|k| !k.is_empty()).or(api_key);
        Self {
            agent: ureq::Agent::new_with_config(config),
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
        }
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        if req.want_logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }
}

fn parse_reply(v: &Value) -> Result<ProviderReply, ProviderError> {
    let choice = v
        .pointer("/choices/0")
        .ok_or_else(|| ProviderError::Malformed("response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Malformed("choice has no message content".into()))?
        .to_string();
    let token_logprobs = match choice.pointer("/logprobs/content").and_then(Value::as_array) {
        None => None,
        Some(items) => Some(
            items
                .iter()
                .map(|t| {
                    Some(TokenLogprob {
                        token: t.get("token")?.as_str()?.to_string(),
                        logprob: t.get("logprob")?.as_f64()?,
                    })
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| ProviderError::Malformed("bad logprob entry".into()))?,
        ),
    };
    Ok(ProviderReply {
        text,
        token_logprobs,
        input_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        output_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
        simulated_latency: None,
    })
}

impl ChatProvider for HttpProvider {
    fn send(&self, req: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = call
            .send_json(self.body(req))
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(format!("HTTP {status}"))),
            429 => return Err(ProviderError::RateLimited(format!("HTTP {status}"))),
            500..=599 => return Err(ProviderError::Transient(format!("HTTP {status}"))),
            _ => return Err(ProviderError::Malformed(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()))),
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        parse_reply(&v)
    }
}
