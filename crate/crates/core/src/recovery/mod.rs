//! Pairwise order inference between hunks, prompt evaluation, and prompt
//! auto-tuning from labelled pairs.

mod dataset;
mod serialize;
mod tuner;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Commit, EditHunk, HunkId};
use crate::flow::{build_flow_graph, FlowError, FlowGraph, OrderLabel, PairLabelSet};
use crate::gateway::{ChatRequest, Gateway, GatewayError, TokenLogprob};

pub use dataset::{evaluate_prompt, split_by_commit, EvalReport, HunkPairSample, LabeledDataset, Split};
pub use serialize::serialize_hunk;
pub use tuner::{
    tune_prompt, tune_prompt_with, EpochRecord, TuneError, TuneOutcome, TunerCheckpoint, TunerConfig,
    FEEDBACK_SYSTEM, INTEGRATE_SYSTEM, SUMMARIZE_SYSTEM,
};

/// Appended to every order-inference system prompt.
pub const RESPONSE_SCHEMA: &str = "Label definitions for the pair (A, B):
- \"precedes\": after making edit A, the developer naturally goes on to make edit B.
- \"follows\": after making edit B, the developer naturally goes on to make edit A.
- \"either\": both directions keep the developer's train of thought.
- \"unrelated\": the edits have no cognitive connection.

Respond with a single JSON object and nothing else:
{\"label\": \"precedes\" | \"follows\" | \"either\" | \"unrelated\", \"rationale\": \"<one sentence>\"}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub text: String,
    #[serde(default)]
    pub accuracy_on_train: Option<f64>,
    #[serde(default)]
    pub epoch_born: u32,
}

impl PromptCandidate {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            accuracy_on_train: None,
            epoch_born: 0,
        }
    }

    pub fn zero_shot() -> Self {
        Self::new(include_str!("../../assets/zero_shot.txt").trim_end())
    }

    /// Eight inline examples, four labelled `either` and four `unrelated`.
    pub fn few_shot() -> Self {
        Self::new(include_str!("../../assets/few_shot.txt").trim_end())
    }

    pub fn hand_crafted() -> Self {
        Self::new(include_str!("../../assets/hand_crafted.txt").trim_end())
    }

    pub fn system_prompt(&self) -> String {
        format!("{}\n\n{}", self.text.trim_end(), RESPONSE_SCHEMA)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_output_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub label: OrderLabel,
    pub label_token_logprobs: Vec<f64>,
    /// Mean of `label_token_logprobs`, 0.0 when none are available.
    pub score: f64,
    pub raw_text: String,
    /// The label field could not be parsed; `label` is the ⊥ fallback.
    #[serde(default)]
    pub parse_warning: bool,
    /// The provider returned no log-probabilities.
    #[serde(default)]
    pub logprobs_missing: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum InferError {
    #[error("cannot order hunk {0} against itself")]
    SameHunk(HunkId),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub fn pair_user_message(a: &EditHunk, b: &EditHunk) -> String {
    format!("A:\n{}\nB:\n{}", serialize_hunk(a), serialize_hunk(b))
}

fn label_field() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#""label"\s*:\s*"([^"]*)""#).unwrap())
}

/// Label parsed from a model answer plus the byte span of its value.
fn locate_label(text: &str) -> Option<(OrderLabel, usize, usize)> {
    let caps = label_field().captures(text)?;
    let m = caps.get(1)?;
    let label = m.as_str().parse().ok()?;
    Some((label, m.start(), m.end()))
}

/// Log-probabilities of the tokens overlapping `[start, end)` of the
/// concatenated token text.
fn span_logprobs(tokens: &[TokenLogprob], start: usize, end: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut pos = 0;
    for t in tokens {
        let next = pos + t.token.len();
        if next > start && pos < end {
            out.push(t.logprob);
        }
        pos = next;
    }
    out
}

/// Interprets a raw answer. Exposed so stored responses can be re-scored.
pub fn parse_inference(text: &str, tokens: Option<&[TokenLogprob]>) -> InferenceResult {
    let joined: Option<String> = tokens.map(|t| t.iter().map(|x| x.token.as_str()).collect());
    let fallback = |parse_warning| InferenceResult {
        label: OrderLabel::Unrelated,
        label_token_logprobs: Vec::new(),
        score: 0.0,
        raw_text: text.to_string(),
        parse_warning,
        logprobs_missing: tokens.is_none(),
    };
    let Some((label, _, _)) = locate_label(text) else {
        return fallback(true);
    };
    let lps = match (tokens, &joined) {
        (Some(t), Some(j)) => match locate_label(j) {
            Some((_, s, e)) => span_logprobs(t, s, e),
            None => Vec::new(),
        },
        _ => Vec::new(),
    };
    let score = if lps.is_empty() { 0.0 } else { lps.iter().sum::<f64>() / lps.len() as f64 };
    InferenceResult {
        label,
        label_token_logprobs: lps,
        score,
        raw_text: text.to_string(),
        parse_warning: false,
        logprobs_missing: tokens.is_none(),
    }
}

/// Asks the model for `λ(a, b)`.
pub fn infer_order(
    prompt: &PromptCandidate,
    a: &EditHunk,
    b: &EditHunk,
    gw: &Gateway,
    opts: &InferOptions,
) -> Result<InferenceResult, InferError> {
    if a.id == b.id && a.file == b.file && a.line_start == b.line_start {
        return Err(InferError::SameHunk(a.id));
    }
    let req = ChatRequest {
        system: prompt.system_prompt(),
        user: pair_user_message(a, b),
        temperature: opts.temperature,
        max_output_tokens: opts.max_output_tokens,
        want_logprobs: true,
    };
    let resp = gw.complete(&req)?;
    let r = parse_inference(&resp.text, resp.token_logprobs.as_deref());
    if r.parse_warning {
        log::warn!("unparseable order label for ({}, {}); using unrelated", a.id, b.id);
    } else if r.logprobs_missing {
        log::warn!("provider returned no logprobs for ({}, {}); score 0.0", a.id, b.id);
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphInference {
    pub labels: PairLabelSet,
    pub graph: FlowGraph,
    pub calls: usize,
    pub parse_warnings: usize,
}

#[derive(Debug, Error)]
pub enum InferGraphError {
    #[error("commit {0} has fewer than two hunks")]
    TooFewHunks(String),
    #[error("inference aborted after {} labelled pair(s): {source}", partial.len())]
    Aborted {
        partial: PairLabelSet,
        #[source]
        source: InferError,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Labels every unordered pair in canonical orientation, skipping pairs
/// already present in `resume`, then builds the flow graph.
pub fn infer_graph(
    prompt: &PromptCandidate,
    commit: &Commit,
    gw: &Gateway,
    opts: &InferOptions,
    resume: Option<PairLabelSet>,
) -> Result<GraphInference, InferGraphError> {
    if commit.hunks.len() < 2 {
        return Err(InferGraphError::TooFewHunks(commit.commit_id.clone()));
    }
    let mut labels = resume.unwrap_or_else(|| PairLabelSet::new(&commit.commit_id));
    labels.commit_id = commit.commit_id.clone();
    let mut hunks: Vec<&EditHunk> = commit.hunks.iter().collect();
    hunks.sort_by_key(|h| h.id);
    let (mut calls, mut parse_warnings) = (0, 0);
    for (i, a) in hunks.iter().enumerate() {
        for b in &hunks[i + 1..] {
            if labels.contains(a.id, b.id) {
                continue;
            }
            match infer_order(prompt, a, b, gw, opts) {
                Ok(r) => {
                    calls += 1;
                    parse_warnings += r.parse_warning as usize;
                    labels.set(a.id, b.id, r.label);
                }
                Err(source) => return Err(InferGraphError::Aborted { partial: labels, source }),
            }
        }
    }
    let graph = build_flow_graph(&commit.hunk_ids(), &labels)?;
    Ok(GraphInference {
        labels,
        graph,
        calls,
        parse_warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::{commit, hunk};
    use crate::gateway::{MockProvider, MockResponse, PriceTable};

    fn gw_answering(label: &'static str, logprobs: Option<Vec<f64>>) -> Gateway {
        Gateway::new(
            MockProvider::from_fn(move |_| {
                let text = format!(r#"{{"label": "{label}", "rationale": "r"}}"#);
                let tokens = logprobs.clone().map(|lps| {
                    // Tokens: prefix, label value split in two, suffix.
                    let (x, y) = label.split_at(label.len() / 2);
                    let mut v = vec![
                        TokenLogprob { token: r#"{"label": ""#.into(), logprob: -0.01 },
                        TokenLogprob { token: x.into(), logprob: lps[0] },
                        TokenLogprob { token: y.into(), logprob: lps[1] },
                    ];
                    v.push(TokenLogprob { token: r#"", "rationale": "r"}"#.into(), logprob: -0.02 });
                    v
                });
                Ok(MockResponse { text, tokens, ..MockResponse::default() })
            }),
            PriceTable::free("mock"),
        )
    }

    #[test]
    fn label_score_is_mean_of_label_tokens() {
        let gw = gw_answering("precedes", Some(vec![-0.1, -0.3]));
        let a = hunk(1, "a.py", 1, "x\n", "y\n");
        let b = hunk(2, "b.py", 1, "x\n", "y\n");
        let r = infer_order(&PromptCandidate::zero_shot(), &a, &b, &gw, &InferOptions::default()).unwrap();
        assert_eq!(r.label, OrderLabel::Precedes);
        assert_eq!(r.label_token_logprobs, vec![-0.1, -0.3]);
        assert!((r.score + 0.2).abs() < 1e-12);
    }

    #[test]
    fn malformed_answer_falls_back_to_unrelated() {
        let gw = Gateway::new(MockProvider::from_fn(|_| Ok(MockResponse::text("I think A first"))), PriceTable::free("m"));
        let a = hunk(1, "a.py", 1, "x\n", "y\n");
        let b = hunk(2, "b.py", 1, "x\n", "y\n");
        let r = infer_order(&PromptCandidate::zero_shot(), &a, &b, &gw, &InferOptions::default()).unwrap();
        assert_eq!((r.label, r.score, r.parse_warning), (OrderLabel::Unrelated, 0.0, true));
    }

    #[test]
    fn pair_count_and_edgeless_graph() {
        let gw = gw_answering("unrelated", None);
        let c = commit((1..=5).map(|i| hunk(i, "a.py", i * 10, "x\n", "y\n")).collect());
        let g = infer_graph(&PromptCandidate::zero_shot(), &c, &gw, &InferOptions::default(), None).unwrap();
        assert_eq!(gw.calls(), 10);
        assert_eq!(g.calls, 10);
        assert!(g.graph.edges.is_empty());
    }

    #[test]
    fn resume_skips_labelled_pairs() {
        let gw = gw_answering("either", None);
        let c = commit((1..=4).map(|i| hunk(i, "a.py", i * 10, "x\n", "y\n")).collect());
        let mut partial = PairLabelSet::new("c0ffee");
        partial.set(HunkId(1), HunkId(2), OrderLabel::Precedes);
        let g = infer_graph(&PromptCandidate::zero_shot(), &c, &gw, &InferOptions::default(), Some(partial)).unwrap();
        assert_eq!(g.calls, 5);
        assert_eq!(g.labels.get(HunkId(1), HunkId(2)), Some(OrderLabel::Precedes));
    }

    #[test]
    fn system_prompt_carries_schema() {
        for p in [PromptCandidate::zero_shot(), PromptCandidate::few_shot(), PromptCandidate::hand_crafted()] {
            assert!(p.system_prompt().ends_with(RESPONSE_SCHEMA));
        }
        let few = PromptCandidate::few_shot().text;
        assert_eq!(few.matches("\"label\": \"either\"").count(), 4);
        assert_eq!(few.matches("\"label\": \"unrelated\"").count(), 4);
    }
}
