//! Chat-completion access with per-token log-probabilities, usage
//! accounting, retries, and rate limiting.

mod http;
mod mock;

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpProvider;
pub use mock::{mock_tokenize, Matcher, MockEntry, MockFailure, MockProvider, MockResponse, MockScript, MockScriptEntry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub want_logprobs: bool,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            temperature: 0.7,
            max_output_tokens: 4096,
            want_logprobs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Wall-clock seconds, including retries.
    pub latency: f64,
    pub cost: f64,
    /// Token counts were approximated because the provider omitted them.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub estimated: bool,
}

impl UsageRecord {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    pub fn add(&mut self, other: &UsageRecord) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.latency += other.latency;
        self.cost += other.cost;
        self.estimated |= other.estimated;
    }
}

/// Fieldwise sum; the empty list sums to zero.
pub fn aggregate_usage<'a>(records: impl IntoIterator<Item = &'a UsageRecord>) -> UsageRecord {
    let mut total = UsageRecord::default();
    for r in records {
        total.add(r);
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    pub model_name: String,
    /// Currency units per input token.
    pub price_in: f64,
    /// Currency units per output token.
    pub price_out: f64,
}

impl PriceTable {
    pub fn free(model_name: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            price_in: 0.0,
            price_out: 0.0,
        }
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        input_tokens as f64 * self.price_in + output_tokens as f64 * self.price_out
    }
}

/// Whitespace-delimited token estimate.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// What a provider returns for one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
    /// Providers that simulate time report it here instead of being timed.
    pub simulated_latency: Option<f64>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ProviderError {
    fn retryable(&self) -> bool {
        matches!(self, Self::RateLimited(_) | Self::Transient(_))
    }
}

pub trait ChatProvider: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<ProviderReply, ProviderError>;
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited after {attempts} attempt(s): {message}")]
    RateLimited { attempts: u32, message: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
        }
    }
}

/// Spaces dispatches so that at most `per_minute` requests start per minute.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(per_minute: u32) -> Self {
        Self {
            interval: Duration::from_secs_f64(60.0 / per_minute.max(1) as f64),
            next: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// Provider front end. Every call to [`Gateway::complete`], successful or
/// not, appends exactly one record to the session ledger.
pub struct Gateway {
    provider: Box<dyn ChatProvider>,
    prices: PriceTable,
    retry: RetryPolicy,
    limiter: Option<RateLimiter>,
    ledger: Mutex<Vec<UsageRecord>>,
}

impl Gateway {
    pub fn new(provider: impl ChatProvider + 'static, prices: PriceTable) -> Self {
        Self {
            provider: Box::new(provider),
            prices,
            retry: RetryPolicy::default(),
            limiter: None,
            ledger: Mutex::new(Vec::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, per_minute: Option<u32>) -> Self {
        self.limiter = per_minute.map(RateLimiter::per_minute);
        self
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    pub fn ledger(&self) -> Vec<UsageRecord> {
        self.ledger.lock().unwrap().clone()
    }

    pub fn take_ledger(&self) -> Vec<UsageRecord> {
        std::mem::take(&mut *self.ledger.lock().unwrap())
    }

    /// Sum of the records appended after the first `n`.
    pub fn usage_since(&self, n: usize) -> UsageRecord {
        let ledger = self.ledger.lock().unwrap();
        aggregate_usage(ledger.get(n..).unwrap_or_default())
    }

    pub fn calls(&self) -> usize {
        self.ledger.lock().unwrap().len()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let started = Instant::now();
        let mut attempt = 0u32;
        let mut simulated = 0.0;
        let mut any_simulated = false;
        let outcome = loop {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            attempt += 1;
            match self.provider.send(req) {
                Ok(reply) => break Ok(reply),
                Err(e) if e.retryable() && attempt <= self.retry.max_retries => {
                    let delay = self.retry.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!("provider attempt {attempt} failed ({e}); retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                }
                Err(e) => break Err(e),
            }
        };
        let elapsed = started.elapsed().as_secs_f64();
        match outcome {
            Ok(reply) => {
                if let Some(s) = reply.simulated_latency {
                    simulated += s;
                    any_simulated = true;
                }
                let estimated = reply.input_tokens.is_none() || reply.output_tokens.is_none();
                let input_tokens = reply
                    .input_tokens
                    .unwrap_or_else(|| estimate_tokens(&req.system) + estimate_tokens(&req.user));
                let output_tokens = reply.output_tokens.unwrap_or_else(|| estimate_tokens(&reply.text));
                let usage = UsageRecord {
                    input_tokens,
                    output_tokens,
                    latency: if any_simulated { simulated } else { elapsed },
                    cost: self.prices.cost(input_tokens, output_tokens),
                    estimated,
                };
                self.ledger.lock().unwrap().push(usage);
                Ok(ChatResponse {
                    text: reply.text,
                    token_logprobs: reply.token_logprobs,
                    usage,
                })
            }
            Err(e) => {
                self.ledger.lock().unwrap().push(UsageRecord {
                    latency: elapsed.max(f64::MIN_POSITIVE),
                    ..UsageRecord::default()
                });
                Err(match e {
                    ProviderError::Auth(m) => GatewayError::AuthFailure(m),
                    ProviderError::RateLimited(message) => GatewayError::RateLimited {
                        attempts: attempt,
                        message,
                    },
                    ProviderError::Transient(message) => GatewayError::Transport {
                        attempts: attempt,
                        message,
                    },
                    ProviderError::Malformed(m) => GatewayError::MalformedResponse(m),
                })
            }
        }
    }
}
