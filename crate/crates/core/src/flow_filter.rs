//! Flow-aware post-processing of recommendations: keep the candidates that
//! continue from the most recent edit, rank them by label confidence, and
//! park the rest in a recycling pool.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{EditHunk, HunkId};
use crate::flow::{OrderLabel, PredictedEdit};
use crate::gateway::{Gateway, UsageRecord};
use crate::recovery::{infer_order, InferOptions, PromptCandidate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Pass candidates whose inference failed through to the tail instead
    /// of dropping them.
    pub fail_open: bool,
    /// Number of recent edits each candidate is checked against. Only 1 is
    /// supported.
    pub context_window: usize,
    pub infer: InferOptions,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            fail_open: true,
            context_window: 1,
            infer: InferOptions::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.context_window != 1 {
            return Err(format!("context_window {} is not supported; use 1", self.context_window));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    Kept { score: f64 },
    Deferred { label: OrderLabel },
    /// Inference failed and the candidate went to the tail unscored.
    PassedThrough { error: String },
    /// Inference failed and the filter runs fail-closed.
    Dropped { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub prediction: PredictedEdit,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub evaluated_against: HunkId,
    #[serde(default)]
    pub from_pool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub prediction: PredictedEdit,
    pub deferred_at: usize,
    /// Label from the most recent evaluation.
    pub label: OrderLabel,
}

/// Deferred candidates, unique by [`PredictedEdit::dedup_key`]. Entries
/// live for the whole session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecyclePool {
    pub entries: Vec<PoolEntry>,
}

impl RecyclePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn position(&self, key: &(String, String, String)) -> Option<usize> {
        self.entries.iter().position(|e| &e.prediction.dedup_key() == key)
    }

    pub fn contains(&self, p: &PredictedEdit) -> bool {
        self.position(&p.dedup_key()).is_some()
    }

    /// Adds `p`, or refreshes the label of its existing entry.
    pub fn defer(&mut self, p: &PredictedEdit, label: OrderLabel, step: usize) {
        match self.position(&p.dedup_key()) {
            Some(i) => self.entries[i].label = label,
            None => self.entries.push(PoolEntry {
                prediction: p.clone(),
                deferred_at: step,
                label,
            }),
        }
    }

    pub fn remove(&mut self, p: &PredictedEdit) -> Option<PoolEntry> {
        self.position(&p.dedup_key()).map(|i| self.entries.remove(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<PredictedEdit>,
    pub decisions: Vec<FilterDecision>,
    pub usage: UsageRecord,
}

/// Evaluates each candidate against the last edit only. Returns the label
/// and score, or the failure message.
fn evaluate(
    last: &EditHunk,
    p: &PredictedEdit,
    prompt: &PromptCandidate,
    gw: &Gateway,
    cfg: &FilterConfig,
) -> Result<(OrderLabel, f64), String> {
    infer_order(prompt, last, &p.to_hunk(), gw, &cfg.infer)
        .map(|r| (r.label, r.score))
        .map_err(|e| e.to_string())
}

/// Filters `batch` plus every pooled entry against `last_edit`. Candidates
/// labelled precedes or either are kept and sorted by score (descending),
/// then SUT rank, with pooled entries last among equals. The rest are
/// deferred into `pool`.
pub fn filter_and_rank(
    last_edit: &EditHunk,
    batch: &[PredictedEdit],
    pool: &mut RecyclePool,
    prompt: &PromptCandidate,
    gw: &Gateway,
    cfg: &FilterConfig,
    step: usize,
) -> FilterOutcome {
    let ledger_start = gw.calls();
    let mut seen = BTreeSet::new();
    let mut candidates: Vec<(PredictedEdit, bool)> = Vec::new();
    for p in batch {
        if seen.insert(p.dedup_key()) {
            candidates.push((p.clone(), false));
        }
    }
    for e in &pool.entries {
        if seen.insert(e.prediction.dedup_key()) {
            candidates.push((e.prediction.clone(), true));
        }
    }

    let mut kept: Vec<(f64, u32, bool, PredictedEdit)> = Vec::new();
    let mut tail = Vec::new();
    let mut decisions = Vec::with_capacity(candidates.len());
    for (p, from_pool) in candidates {
        let verdict = match evaluate(last_edit, &p, prompt, gw, cfg) {
            Ok((label, score)) if label.continues_flow() => {
                pool.remove(&p);
                kept.push((score, p.source_rank, from_pool, p.clone()));
                Verdict::Kept { score }
            }
            Ok((label, _)) => {
                pool.defer(&p, label, step);
                Verdict::Deferred { label }
            }
            Err(error) => {
                log::warn!("filter inference failed at step {step}: {error}");
                if cfg.fail_open {
                    tail.push(p.clone());
                    Verdict::PassedThrough { error }
                } else {
                    Verdict::Dropped { error }
                }
            }
        };
        decisions.push(FilterDecision {
            prediction: p,
            verdict,
            evaluated_against: last_edit.id,
            from_pool,
        });
    }
    kept.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out: Vec<PredictedEdit> = kept.into_iter().map(|k| k.3).collect();
    out.extend(tail);
    FilterOutcome {
        kept: out,
        decisions,
        usage: gw.usage_since(ledger_start),
    }
}

/// Re-evaluates the pool against a new last edit and returns entries that
/// now continue the flow, removing them from the pool.
pub fn recycle_scan(
    pool: &mut RecyclePool,
    new_last_edit: &EditHunk,
    prompt: &PromptCandidate,
    gw: &Gateway,
    cfg: &FilterConfig,
) -> Vec<PredictedEdit> {
    let mut resurfaced = Vec::new();
    let mut remaining = Vec::with_capacity(pool.len());
    for mut e in std::mem::take(&mut pool.entries) {
        match evaluate(new_last_edit, &e.prediction, prompt, gw, cfg) {
            Ok((label, _)) if label.continues_flow() => resurfaced.push(e.prediction),
            Ok((label, _)) => {
                e.label = label;
                remaining.push(e);
            }
            Err(error) => {
                log::warn!("recycle scan inference failed: {error}");
                remaining.push(e);
            }
        }
    }
    pool.entries = remaining;
    resurfaced
}

/// Filter state owned by one simulation.
pub struct FlowFilter<'a> {
    pub prompt: PromptCandidate,
    pub gw: &'a Gateway,
    pub cfg: FilterConfig,
    pub pool: RecyclePool,
}

impl<'a> FlowFilter<'a> {
    pub fn new(prompt: PromptCandidate, gw: &'a Gateway, cfg: FilterConfig) -> Self {
        Self {
            prompt,
            gw,
            cfg,
            pool: RecyclePool::default(),
        }
    }

    pub fn filter_and_rank(&mut self, last_edit: &EditHunk, batch: &[PredictedEdit], step: usize) -> FilterOutcome {
        filter_and_rank(last_edit, batch, &mut self.pool, &self.prompt, self.gw, &self.cfg, step)
    }
}

/// Input of the standalone filter: one batch and, optionally, the pool
/// carried over from an earlier call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRequest {
    #[serde(default = "crate::twin::default_protocol_version")]
    pub protocol_version: u32,
    pub last_edit: EditHunk,
    pub edits: Vec<PredictedEdit>,
    #[serde(default)]
    pub pool: RecyclePool,
    #[serde(default)]
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterResponse {
    pub protocol_version: u32,
    pub kept: Vec<PredictedEdit>,
    pub decisions: Vec<FilterDecision>,
    pub pool: RecyclePool,
    pub usage: UsageRecord,
}

pub fn filter_document(req: FilterRequest, prompt: &PromptCandidate, gw: &Gateway, cfg: &FilterConfig) -> FilterResponse {
    let mut pool = req.pool;
    let out = filter_and_rank(&req.last_edit, &req.edits, &mut pool, prompt, gw, cfg, req.step);
    FilterResponse {
        protocol_version: crate::twin::PROTOCOL_VERSION,
        kept: out.kept,
        decisions: out.decisions,
        pool,
        usage: out.usage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_support::hunk;
    use crate::gateway::{MockProvider, MockResponse, PriceTable, ProviderError, TokenLogprob};

    /// Label and label logprob chosen by the candidate's content.
    fn oracle(table: Vec<(&'static str, &'static str, f64)>) -> Gateway {
        Gateway::new(
            MockProvider::from_fn(move |req| {
                let b = req.user.split("\nB:\n").nth(1).unwrap_or("");
                for (needle, label, lp) in &table {
                    if b.contains(needle) {
                        if *label == "fail" {
                            return Err(ProviderError::Malformed("boom".into()));
                        }
                        let tokens = vec![
                            TokenLogprob { token: "{\"label\": \"".into(), logprob: -0.01 },
                            TokenLogprob { token: label.to_string(), logprob: *lp },
                            TokenLogprob { token: "\"}".into(), logprob: -0.01 },
                        ];
                        return Ok(MockResponse { tokens: Some(tokens), ..Default::default() });
                    }
                }
                Ok(MockResponse::text(r#"{"label": "unrelated"}"#))
            }),
            PriceTable::free("m"),
        )
    }

    fn pred(content: &str, rank: u32) -> PredictedEdit {
        PredictedEdit::from_hunk(&hunk(0, "a.py", 5, "old\n", &format!("{content}\n")), rank)
    }

    #[test]
    fn ranks_by_score_and_defers_the_rest() {
        let gw = oracle(vec![("alpha", "precedes", -0.1), ("beta", "either", -0.5), ("gamma", "follows", -0.2)]);
        let last = hunk(1, "a.py", 1, "x\n", "y\n");
        let mut pool = RecyclePool::default();
        let batch = [pred("beta", 0), pred("alpha", 1), pred("gamma", 2)];
        let out = filter_and_rank(&last, &batch, &mut pool, &PromptCandidate::zero_shot(), &gw, &FilterConfig::default(), 1);
        let kept: Vec<_> = out.kept.iter().map(|p| p.content_post.trim().to_string()).collect();
        assert_eq!(kept, ["alpha", "beta"]);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.entries[0].label, OrderLabel::Follows);
        assert_eq!(gw.calls(), 3);
    }

    #[test]
    fn ties_keep_sut_order_and_pool_last() {
        let gw = oracle(vec![("a1", "either", -0.3), ("a2", "either", -0.3), ("a3", "either", -0.3)]);
        let last = hunk(1, "a.py", 1, "x\n", "y\n");
        let mut pool = RecyclePool::default();
        pool.defer(&pred("a1", 0), OrderLabel::Unrelated, 0);
        let batch = [pred("a3", 1), pred("a2", 0)];
        let out = filter_and_rank(&last, &batch, &mut pool, &PromptCandidate::zero_shot(), &gw, &FilterConfig::default(), 2);
        let kept: Vec<_> = out.kept.iter().map(|p| p.content_post.trim().to_string()).collect();
        assert_eq!(kept, ["a2", "a1", "a3"]);
        assert!(out.decisions.iter().any(|d| d.from_pool));
        assert!(pool.is_empty());
    }

    #[test]
    fn failures_fail_open_or_closed() {
        let gw = oracle(vec![("bad", "fail", 0.0), ("good", "precedes", -0.1)]);
        let last = hunk(1, "a.py", 1, "x\n", "y\n");
        let batch = [pred("bad", 0), pred("good", 1)];
        let mut pool = RecyclePool::default();
        let out = filter_and_rank(&last, &batch, &mut pool, &PromptCandidate::zero_shot(), &gw, &FilterConfig::default(), 1);
        assert_eq!(out.kept.len(), 2);
        assert_eq!(out.kept[1].content_post.trim(), "bad");
        let closed = FilterConfig { fail_open: false, ..Default::default() };
        let out = filter_and_rank(&last, &batch, &mut pool, &PromptCandidate::zero_shot(), &gw, &closed, 1);
        assert_eq!(out.kept.len(), 1);
        assert!(pool.is_empty());
    }

    #[test]
    fn recycle_scan_resurfaces_on_flip() {
        let gw = oracle(vec![("later", "precedes", -0.1)]);
        let mut pool = RecyclePool::default();
        assert!(recycle_scan(&mut pool, &hunk(1, "a.py", 1, "x\n", "y\n"), &PromptCandidate::zero_shot(), &gw, &FilterConfig::default()).is_empty());
        pool.defer(&pred("later", 0), OrderLabel::Unrelated, 1);
        pool.defer(&pred("never", 1), OrderLabel::Unrelated, 1);
        let back = recycle_scan(&mut pool, &hunk(2, "a.py", 1, "x\n", "y\n"), &PromptCandidate::zero_shot(), &gw, &FilterConfig::default());
        assert_eq!(back.len(), 1);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.entries[0].prediction.content_post.trim(), "never");
    }

    #[test]
    fn only_window_one() {
        assert!(FilterConfig { context_window: 2, ..Default::default() }.validate().is_err());
    }
}
