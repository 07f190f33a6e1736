//! Flow-category statistics, correctness, violation counts, resource
//! aggregates, and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Commit, HunkId};
use crate::flow::{FlowCategory, FlowGraph};
use crate::gateway::{aggregate_usage, UsageRecord};
use crate::twin::SimulationTrace;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no classified predictions")]
    NoPredictions,
    #[error("no commit data for trace {0}")]
    MissingCommit(String),
    #[error("sequence does not match the graph: {0}")]
    SequenceMismatch(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub keep: u64,
    pub jump: u64,
    pub revert: u64,
    #[serde(rename = "break")]
    pub break_: u64,
}

impl CategoryCounts {
    pub fn add(&mut self, c: FlowCategory) {
        match c {
            FlowCategory::Keep => self.keep += 1,
            FlowCategory::Jump => self.jump += 1,
            FlowCategory::Revert => self.revert += 1,
            FlowCategory::Break => self.break_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.keep + self.jump + self.revert + self.break_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub keep_pct: f64,
    pub jump_pct: f64,
    pub revert_pct: f64,
    pub break_pct: f64,
    pub counts: CategoryCounts,
}

impl FlowStats {
    pub fn from_counts(counts: CategoryCounts) -> Result<Self, MetricsError> {
        let total = counts.total();
        if total == 0 {
            return Err(MetricsError::NoPredictions);
        }
        let pct = |n: u64| 100.0 * n as f64 / total as f64;
        Ok(Self {
            keep_pct: pct(counts.keep),
            jump_pct: pct(counts.jump),
            revert_pct: pct(counts.revert),
            break_pct: pct(counts.break_),
            counts,
        })
    }
}

/// Pools every evaluated prediction across traces.
pub fn flow_stats(traces: &[SimulationTrace]) -> Result<FlowStats, MetricsError> {
    let mut counts = CategoryCounts::default();
    for c in traces.iter().flat_map(|t| t.query_steps()).flat_map(|s| &s.classifications) {
        counts.add(*c);
    }
    FlowStats::from_counts(counts)
}

/// Precision-weighted F-measure, 0 when both inputs are 0.
pub fn f_half(p: f64, r: f64) -> f64 {
    if p + r <= 0.0 {
        0.0
    } else {
        1.25 * p * r / (0.25 * p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectnessStats {
    /// Mean of per-request precisions over nonempty batches.
    pub precision: f64,
    /// Mean of per-commit recalls.
    pub recall: f64,
    pub f_half: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f_half: f64,
    pub requests: usize,
    pub empty_requests: usize,
    pub commits: usize,
}

/// A prediction counts as correct when it names a pending ground-truth
/// hunk (KEEP or JUMP). Recall divides the distinct hunks correctly
/// predicted in a run by the hunks that could be predicted, i.e. all but
/// the seed.
pub fn correctness_stats(traces: &[SimulationTrace], commits: &[Commit]) -> Result<CorrectnessStats, MetricsError> {
    let by_id: BTreeMap<&str, &Commit> = commits.iter().map(|c| (c.commit_id.as_str(), c)).collect();
    let (mut precisions, mut recalls) = (Vec::new(), Vec::new());
    let (mut empty, mut hit_sum, mut batch_sum, mut found_sum, mut possible_sum) = (0usize, 0u64, 0u64, 0u64, 0u64);
    for t in traces {
        let commit = by_id.get(t.commit_id.as_str()).ok_or_else(|| MetricsError::MissingCommit(t.commit_id.clone()))?;
        let mut found: BTreeSet<HunkId> = BTreeSet::new();
        for s in t.query_steps() {
            if s.batch.is_empty() {
                empty += 1;
                continue;
            }
            let hits = s.classifications.iter().filter(|c| c.is_correct()).count();
            precisions.push(hits as f64 / s.batch.len() as f64);
            hit_sum += hits as u64;
            batch_sum += s.batch.len() as u64;
            for (c, m) in s.classifications.iter().zip(&s.matches) {
                if c.is_correct() {
                    found.extend(m.hunk());
                }
            }
        }
        let possible = commit.hunks.len().saturating_sub(1);
        if possible > 0 {
            recalls.push(found.len() as f64 / possible as f64);
            found_sum += found.len() as u64;
            possible_sum += possible as u64;
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (p, r) = (mean(&precisions), mean(&recalls));
    let (mp, mr) = (ratio(hit_sum, batch_sum), ratio(found_sum, possible_sum));
    Ok(CorrectnessStats {
        precision: p,
        recall: r,
        f_half: f_half(p, r),
        micro_precision: mp,
        micro_recall: mr,
        micro_f_half: f_half(mp, mr),
        requests: precisions.len() + empty,
        empty_requests: empty,
        commits: traces.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationMode {
    /// The graph orders an observed adjacent transition strictly backwards.
    StrictReverse,
    /// The next observed edit is not a one-hop successor of those before it.
    WalkValidity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedSequence {
    pub commit_id: String,
    pub order: Vec<HunkId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub step: usize,
    pub from: HunkId,
    pub to: HunkId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub mode: ViolationMode,
    pub count: usize,
    pub witnesses: Vec<Witness>,
}

pub fn count_violations(g: &FlowGraph, s: &ObservedSequence, mode: ViolationMode) -> Result<ViolationReport, MetricsError> {
    let seen: BTreeSet<HunkId> = s.order.iter().copied().collect();
    if seen.len() != s.order.len() {
        return Err(MetricsError::SequenceMismatch(format!("{} repeats a hunk", s.commit_id)));
    }
    if seen != g.nodes.iter().copied().collect::<BTreeSet<_>>() {
        return Err(MetricsError::SequenceMismatch(format!("{} does not cover the graph's nodes", s.commit_id)));
    }
    let mut witnesses = Vec::new();
    let mut prefix = BTreeSet::new();
    for (t, pair) in s.order.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        prefix.insert(a);
        let violated = match mode {
            ViolationMode::StrictReverse => g.has_edge(b, a) && !g.has_edge(a, b),
            ViolationMode::WalkValidity => !g.successors(&prefix).map_err(|e| MetricsError::SequenceMismatch(e.to_string()))?.contains(&b),
        };
        if violated {
            witnesses.push(Witness { step: t, from: a, to: b });
        }
    }
    Ok(ViolationReport {
        mode,
        count: witnesses.len(),
        witnesses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceStats {
    pub totals: UsageRecord,
    pub requests: usize,
    pub mean_latency: f64,
    pub mean_tokens: f64,
    pub mean_cost: f64,
}

/// Usage summed over every query step, and averaged per request.
pub fn resource_stats(traces: &[SimulationTrace]) -> ResourceStats {
    let steps: Vec<&UsageRecord> = traces.iter().flat_map(|t| t.query_steps()).map(|s| &s.usage).collect();
    let totals = aggregate_usage(steps.iter().copied());
    let n = steps.len();
    let per = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    ResourceStats {
        totals,
        requests: n,
        mean_latency: per(totals.latency),
        mean_tokens: per(totals.total_tokens() as f64),
        mean_cost: per(totals.cost),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sut: String,
    /// `original` or `filter`.
    pub config: String,
    pub traces: usize,
    pub flow: Option<FlowStats>,
    pub correctness: Option<CorrectnessStats>,
    pub resources: ResourceStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub totals: UsageRecord,
    pub traces: usize,
}

/// One row per (SUT, filter setting), original before filtered.
pub fn build_report(traces: &[SimulationTrace], commits: &[Commit]) -> Result<Report, MetricsError> {
    let mut groups: BTreeMap<(String, bool), Vec<SimulationTrace>> = BTreeMap::new();
    for t in traces {
        groups.entry((t.config.sut_id.clone(), t.config.filter)).or_default().push(t.clone());
    }
    let mut rows = Vec::new();
    for ((sut, filter), ts) in groups {
        let flow = match flow_stats(&ts) {
            Ok(f) => Some(f),
            Err(MetricsError::NoPredictions) => None,
            Err(e) => return Err(e),
        };
        let correctness = correctness_stats(&ts, commits)?;
        rows.push(ReportRow {
            sut,
            config: if filter { "filter" } else { "original" }.into(),
            traces: ts.len(),
            flow,
            correctness: (correctness.requests > 0).then_some(correctness),
            resources: resource_stats(&ts),
        });
    }
    Ok(Report {
        rows,
        totals: aggregate_usage(traces.iter().map(|t| &t.totals)),
        traces: traces.len(),
    })
}

const NO_DATA: &str = "no data";

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| NO_DATA.to_string(), |x| format!("{x:.digits$}"))
}

/// Plain-text table: flow percentages, precision, recall, F0.5 (all in
/// percent), then mean latency, tokens and cost per request.
pub fn render_table(report: &Report) -> String {
    let header = [
        "SUT", "Config", "Keep%", "Jump%", "Revert%", "Break%", "Prec", "Rec", "F0.5", "Latency(s)", "Tokens", "Cost",
    ];
    let mut body: Vec<Vec<String>> = Vec::new();
    for r in &report.rows {
        let f = r.flow.as_ref();
        let c = r.correctness.as_ref();
        let res = (r.resources.requests > 0).then_some(&r.resources);
        body.push(vec![
            r.sut.clone(),
            r.config.clone(),
            cell(f.map(|f| f.keep_pct), 2),
            cell(f.map(|f| f.jump_pct), 2),
            cell(f.map(|f| f.revert_pct), 2),
            cell(f.map(|f| f.break_pct), 2),
            cell(c.map(|c| 100.0 * c.precision), 2),
            cell(c.map(|c| 100.0 * c.recall), 2),
            cell(c.map(|c| 100.0 * c.f_half), 2),
            cell(res.map(|r| r.mean_latency), 3),
            cell(res.map(|r| r.mean_tokens), 1),
            cell(res.map(|r| r.mean_cost), 6),
        ]);
    }
    if body.is_empty() {
        let mut row = vec![NO_DATA.to_string(); header.len()];
        row[1] = "-".into();
        body.push(row);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i < 2 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join(" | ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-+-"));
    for r in &body {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Report plus its text rendering.
pub fn render_report(traces: &[SimulationTrace], commits: &[Commit]) -> Result<(Report, String), MetricsError> {
    let report = build_report(traces, commits)?;
    let table = render_table(&report);
    Ok((report, table))
}

/// Minimum or maximum values a report must satisfy; percentages are on a
/// 0-100 scale and correctness on 0-1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub min_precision: Option<f64>,
    pub min_recall: Option<f64>,
    pub min_f_half: Option<f64>,
    pub min_keep_pct: Option<f64>,
    pub max_break_pct: Option<f64>,
    pub max_revert_pct: Option<f64>,
}

impl Thresholds {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Human-readable failures, empty when every row passes.
    pub fn check(&self, report: &Report) -> Vec<String> {
        let mut fails = Vec::new();
        for r in &report.rows {
            let name = format!("{}/{}", r.sut, r.config);
            let mut low = |what: &str, v: Option<f64>, min: Option<f64>| {
                if let Some(min) = min {
                    match v {
                        Some(v) if v >= min => {}
                        Some(v) => fails.push(format!("{name}: {what} {v:.4} below {min}")),
                        None => fails.push(format!("{name}: {what} has no data")),
                    }
                }
            };
            let c = r.correctness.as_ref();
            low("precision", c.map(|c| c.precision), self.min_precision);
            low("recall", c.map(|c| c.recall), self.min_recall);
            low("F0.5", c.map(|c| c.f_half), self.min_f_half);
            low("keep%", r.flow.map(|f| f.keep_pct), self.min_keep_pct);
            for (what, v, max) in [
                ("break%", r.flow.map(|f| f.break_pct), self.max_break_pct),
                ("revert%", r.flow.map(|f| f.revert_pct), self.max_revert_pct),
            ] {
                if let (Some(v), Some(max)) = (v, max) {
                    if v > max {
                        fails.push(format!("{name}: {what} {v:.2} above {max}"));
                    }
                }
            }
        }
        fails
    }
}
