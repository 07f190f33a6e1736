//! The harness configuration file (TOML). Relative paths are resolved
//! against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use editflow_core::corpus::CommitFilter;
use editflow_core::flow_filter::FilterConfig;
use editflow_core::gateway::{
    ChatProvider, ChatRequest, Gateway, HttpProvider, MockProvider, MockScript, PriceTable, ProviderError,
    ProviderReply, RateLimiter, RetryPolicy,
};
use editflow_core::metrics::Thresholds;
use editflow_core::recovery::{PromptCandidate, TunerConfig};
use editflow_core::twin::NoiseProfile;
use serde::Deserialize;

use crate::error::{CliError, CliResult, Classify};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Root of all randomness. Required by `simulate`.
    pub seed: Option<u64>,
    /// Worker threads over commits; 0 means one per logical core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub corpus: CorpusSection,
    pub gateway: Option<GatewaySection>,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub tuner: TunerSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub sut: BTreeMap<String, SutSpec>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("editflow-out")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    #[serde(default)]
    pub repos: Vec<PathBuf>,
    /// Revision range handed to `git rev-list`.
    pub range: Option<String>,
    /// Explicit revisions; when present the range is ignored.
    #[serde(default)]
    pub commits: Vec<String>,
    #[serde(default)]
    pub filter: CommitFilter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewaySection {
    pub kind: GatewayKind,
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: String,
    /// Overridden by `EDITFLOW_API_KEY` when that is set.
    pub api_key: Option<String>,
    /// Mock script (JSON) for `kind = "mock"`.
    pub script: Option<PathBuf>,
    #[serde(default = "default_gateway_timeout")]
    pub timeout_secs: u64,
    pub rate_limit_per_minute: Option<u32>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_delay")]
    pub base_delay_ms: u64,
    #[serde(default)]
    pub price_in: f64,
    #[serde(default)]
    pub price_out: f64,
}

fn default_gateway_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    RetryPolicy::default().max_retries
}

fn default_delay() -> u64 {
    RetryPolicy::default().base_delay_ms
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    /// `zero_shot`, `few_shot` or `hand_crafted`.
    pub builtin: Option<String>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunerSection {
    pub epochs: u32,
    pub batch_size: usize,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub keep_global_best: bool,
    /// Share of annotated commits used for training; the rest is held out.
    pub train_fraction: f64,
    /// Annotation files, as a glob.
    pub annotations: Option<String>,
}

impl Default for TunerSection {
    fn default() -> Self {
        let t = TunerConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            temperature: t.temperature,
            max_output_tokens: t.max_output_tokens,
            keep_global_best: t.keep_global_best,
            train_fraction: 0.8,
            annotations: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub filter: bool,
    pub max_batch: usize,
    pub sut_retries: u32,
    pub filter_config: FilterConfig,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            filter: false,
            max_batch: 10,
            sut_retries: 1,
            filter_config: FilterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SutSpec {
    /// External recommender speaking the JSON protocol on stdin/stdout.
    Subprocess {
        command: String,
        #[serde(default = "default_sut_timeout")]
        timeout_secs: u64,
    },
    /// Seeded synthetic recommender.
    Mock {
        #[serde(default)]
        break_rate: f64,
        #[serde(default)]
        jump_rate: f64,
        #[serde(default)]
        revert_rate: f64,
        #[serde(default = "default_mock_batch")]
        batch_size: usize,
    },
    /// Recorded batches: a script file, or a directory of `<commit>.json`.
    Replay { script: PathBuf },
    /// Recommends exactly the pending successors.
    Oracle {},
}

fn default_sut_timeout() -> u64 {
    60
}

fn default_mock_batch() -> usize {
    5
}

impl SutSpec {
    pub fn noise(&self) -> Option<NoiseProfile> {
        match *self {
            SutSpec::Mock {
                break_rate,
                jump_rate,
                revert_rate,
                ..
            } => Some(NoiseProfile {
                break_rate,
                jump_rate,
                revert_rate,
            }),
            _ => None,
        }
    }
}

impl HarnessConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).or_config(format!("cannot read config {}", path.display()))?;
        let mut cfg: HarnessConfig = toml::from_str(&text).or_config(format!("invalid config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.corpus.repos.iter_mut().for_each(fix);
        if let Some(g) = &mut self.gateway {
            g.script.as_mut().map(fix);
        }
        self.prompt.path.as_mut().map(fix);
        if let Some(a) = &mut self.tuner.annotations {
            if Path::new(a).is_relative() {
                *a = base.join(&*a).to_string_lossy().into_owned();
            }
        }
        for spec in self.sut.values_mut() {
            if let SutSpec::Replay { script } = spec {
                fix(script);
            }
        }
    }

    fn validate(&self) -> CliResult<()> {
        for r in &self.corpus.repos {
            if !r.exists() {
                return Err(CliError::config(format!("repository {} does not exist", r.display())));
            }
        }
        self.corpus.filter.validate().map_err(CliError::config)?;
        if let Some(g) = &self.gateway {
            match g.kind {
                GatewayKind::Http if g.endpoint.is_none() => {
                    return Err(CliError::config("gateway.endpoint is required for kind = \"http\""));
                }
                GatewayKind::Mock => match &g.script {
                    None => return Err(CliError::config("gateway.script is required for kind = \"mock\"")),
                    Some(s) if !s.exists() => {
                        return Err(CliError::config(format!("mock script {} does not exist", s.display())));
                    }
                    _ => {}
                },
                _ => {}
            }
            if g.price_in < 0.0 || g.price_out < 0.0 {
                return Err(CliError::config("gateway prices must be non-negative"));
            }
        }
        if let Some(p) = &self.prompt.path {
            if !p.exists() {
                return Err(CliError::config(format!("prompt {} does not exist", p.display())));
            }
        }
        if let Some(b) = &self.prompt.builtin {
            builtin_prompt(b)?;
        }
        self.tuner_config(0).validate().map_err(|e| CliError::config(format!("tuner: {e}")))?;
        if !(0.0..=1.0).contains(&self.tuner.train_fraction) {
            return Err(CliError::config("tuner.train_fraction must lie in [0, 1]"));
        }
        if self.simulation.max_batch == 0 {
            return Err(CliError::config("simulation.max_batch must be at least 1"));
        }
        self.simulation
            .filter_config
            .validate()
            .map_err(|e| CliError::config(format!("simulation.filter_config: {e}")))?;
        for (name, spec) in &self.sut {
            match spec {
                SutSpec::Subprocess { command, .. } if command.trim().is_empty() => {
                    return Err(CliError::config(format!("sut {name}: empty command")));
                }
                SutSpec::Mock { batch_size, .. } => {
                    if *batch_size == 0 {
                        return Err(CliError::config(format!("sut {name}: batch_size must be at least 1")));
                    }
                    spec.noise()
                        .unwrap()
                        .validate()
                        .map_err(|e| CliError::config(format!("sut {name}: {e}")))?;
                }
                SutSpec::Replay { script } if !script.exists() => {
                    return Err(CliError::config(format!("sut {name}: {} does not exist", script.display())));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn tuner_config(&self, seed: u64) -> TunerConfig {
        TunerConfig {
            epochs: self.tuner.epochs,
            batch_size: self.tuner.batch_size,
            temperature: self.tuner.temperature,
            max_output_tokens: self.tuner.max_output_tokens,
            keep_global_best: self.tuner.keep_global_best,
            rng_seed: seed,
        }
    }

    pub fn require_seed(&self, command: &str) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::config(format!("`seed` must be set in the config for {command}")))
    }

    /// The prompt named on the command line, else the configured one, else
    /// the hand-crafted default.
    pub fn prompt(&self, cli: Option<&Path>) -> CliResult<PromptCandidate> {
        if let Some(p) = cli.or(self.prompt.path.as_deref()) {
            let text = std::fs::read_to_string(p).or_config(format!("cannot read prompt {}", p.display()))?;
            return Ok(PromptCandidate::new(text.trim_end()));
        }
        builtin_prompt(self.prompt.builtin.as_deref().unwrap_or("hand_crafted"))
    }

    pub fn threads(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        }
    }
}

fn builtin_prompt(name: &str) -> CliResult<PromptCandidate> {
    match name {
        "zero_shot" => Ok(PromptCandidate::zero_shot()),
        "few_shot" => Ok(PromptCandidate::few_shot()),
        "hand_crafted" => Ok(PromptCandidate::hand_crafted()),
        other => Err(CliError::config(format!(
            "unknown builtin prompt {other:?} (expected zero_shot, few_shot or hand_crafted)"
        ))),
    }
}

/// Builds one gateway per unit of work so usage ledgers stay separate;
/// the rate limit is shared by all of them.
pub struct GatewayFactory {
    section: GatewaySection,
    script: Option<MockScript>,
    limiter: Option<Arc<RateLimiter>>,
}

struct Throttled {
    inner: Box<dyn ChatProvider>,
    limiter: Option<Arc<RateLimiter>>,
}

impl ChatProvider for Throttled {
    fn send(&self, req: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        self.inner.send(req)
    }
}

impl GatewayFactory {
    pub fn from_config(cfg: &HarnessConfig, command: &str) -> CliResult<Self> {
        let section = cfg
            .gateway
            .clone()
            .ok_or_else(|| CliError::config(format!("{command} needs a [gateway] section")))?;
        let script = match (&section.kind, &section.script) {
            (GatewayKind::Mock, Some(path)) => {
                let text = std::fs::read_to_string(path).or_config(format!("cannot read {}", path.display()))?;
                let script: MockScript =
                    serde_json::from_str(&text).or_config(format!("invalid mock script {}", path.display()))?;
                MockProvider::new(script.clone()).map_err(CliError::config)?;
                Some(script)
            }
            _ => None,
        };
        let limiter = section.rate_limit_per_minute.map(|n| Arc::new(RateLimiter::per_minute(n)));
        Ok(Self {
            section,
            script,
            limiter,
        })
    }

    pub fn build(&self) -> Gateway {
        let s = &self.section;
        let inner: Box<dyn ChatProvider> = match s.kind {
            GatewayKind::Http => Box::new(HttpProvider::new(
                s.endpoint.as_deref().unwrap_or_default(),
                &s.model,
                s.api_key.clone(),
                Duration::from_secs(s.timeout_secs),
            )),
            GatewayKind::Mock => Box::new(MockProvider::new(self.script.clone().unwrap_or_default()).expect("validated")),
        };
        let prices = PriceTable {
            model_name: s.model.clone(),
            price_in: s.price_in,
            price_out: s.price_out,
        };
        let provider = Throttled {
            inner,
            limiter: self.limiter.clone(),
        };
        Gateway::new(provider, prices).with_retry(RetryPolicy {
            max_retries: s.max_retries,
            base_delay_ms: s.base_delay_ms,
        })
    }
}
