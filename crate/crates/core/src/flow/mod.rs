//! Order labels, the mental-flow graph, and four-way classification of
//! predicted edits.

mod graph;
mod labels;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Commit, EditHunk, EditState, HunkId};

pub use graph::{build_flow_graph, ExportEdge, FlowGraph, GraphExport};
pub use labels::{AnnotatedPair, AnnotationFile, OrderLabel, PairLabelSet, UnknownLabel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("labels missing for {} pair(s), first {:?}", .0.len(), .0.first())]
    IncompleteLabels(Vec<(HunkId, HunkId)>),
    #[error("unknown hunk {0}")]
    UnknownHunk(HunkId),
    #[error("self-loop on {0}")]
    SelfLoop(HunkId),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("prediction matches several hunks: {0:?}")]
    AmbiguousMatch(Vec<HunkId>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FlowCategory {
    Keep,
    Jump,
    Revert,
    Break,
}

impl FlowCategory {
    pub const ALL: [FlowCategory; 4] = [Self::Keep, Self::Jump, Self::Revert, Self::Break];

    /// Whether the prediction names a ground-truth hunk that is still pending.
    pub fn is_correct(self) -> bool {
        matches!(self, Self::Keep | Self::Jump)
    }
}

/// An edit proposed by a recommender, in current workspace coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedEdit {
    pub file: String,
    pub line_start: u32,
    pub line_end: u32,
    #[serde(default)]
    pub content_pre: String,
    #[serde(default)]
    pub content_post: String,
    /// Position in the recommender's own ranking, 0 = best.
    #[serde(default)]
    pub source_rank: u32,
}

impl PredictedEdit {
    /// The prediction that reproduces `h` exactly, in `h`'s coordinates.
    pub fn from_hunk(h: &EditHunk, source_rank: u32) -> Self {
        Self {
            file: h.file.clone(),
            line_start: h.line_start,
            line_end: h.line_end,
            content_pre: h.content_pre.clone(),
            content_post: h.content_post.clone(),
            source_rank,
        }
    }

    /// Pending hunk `h` as it would be suggested in the current workspace.
    pub fn forward(h: &EditHunk, state: &EditState, source_rank: u32) -> Self {
        Self::from_hunk(&state.current_frame(h), source_rank)
    }

    /// Undo of applied hunk `h` at its current position.
    pub fn revert(h: &EditHunk, state: &EditState, source_rank: u32) -> Self {
        let (start, end) = state.current_post_range(h);
        Self {
            file: h.file.clone(),
            line_start: start.max(1) as u32,
            line_end: end.max(0) as u32,
            content_pre: h.content_post.clone(),
            content_post: h.content_pre.clone(),
            source_rank,
        }
    }

    /// Views the prediction as a hunk for prompting. It has no structural
    /// path and a placeholder id.
    pub fn to_hunk(&self) -> EditHunk {
        EditHunk {
            id: HunkId(0),
            file: self.file.clone(),
            line_start: self.line_start,
            line_end: self.line_end,
            content_pre: self.content_pre.clone(),
            content_post: self.content_post.clone(),
            structural_path: String::new(),
        }
    }

    /// Identity for deduplication. Line numbers are left out so a pooled
    /// prediction still matches after earlier edits shift the file.
    pub fn dedup_key(&self) -> (String, String, String) {
        (
            self.file.clone(),
            normalize_content(&self.content_pre),
            normalize_content(&self.content_post),
        )
    }

    fn range(&self) -> (i64, i64) {
        (self.line_start as i64, self.line_end as i64)
    }
}

/// Per-line trim, blank lines dropped.
pub fn normalize_content(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "hunk")]
pub enum MatchOutcome {
    /// The prediction reproduces this ground-truth hunk.
    Hunk(HunkId),
    /// The prediction undoes this applied hunk.
    RevertOf(HunkId),
    NoMatch,
}

impl MatchOutcome {
    pub fn hunk(self) -> Option<HunkId> {
        match self {
            Self::Hunk(h) | Self::RevertOf(h) => Some(h),
            Self::NoMatch => None,
        }
    }
}

/// Matching leniency. The default is exact normalized equality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MatchOptions {
    /// When set, an overlapping pending hunk whose token-set Jaccard
    /// similarity with the prediction reaches this value also matches.
    pub similarity_threshold: Option<f64>,
}

fn overlaps((a0, a1): (i64, i64), (b0, b1): (i64, i64)) -> bool {
    // Half-open ranges; an empty range touches its insertion point.
    let a_end = (a1 + 1).max(a0 + 1);
    let b_end = (b1 + 1).max(b0 + 1);
    a0 < b_end && b0 < a_end
}

fn token_jaccard(a: &str, b: &str) -> f64 {
    let ta: BTreeSet<&str> = a.split_whitespace().collect();
    let tb: BTreeSet<&str> = b.split_whitespace().collect();
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / ta.union(&tb).count() as f64
}

fn unique(ids: Vec<HunkId>) -> Result<Option<HunkId>, FlowError> {
    match ids.len() {
        0 => Ok(None),
        1 => Ok(Some(ids[0])),
        _ => Err(FlowError::AmbiguousMatch(ids)),
    }
}

/// Finds the ground-truth hunk a prediction corresponds to: same file,
/// overlapping location (each hunk placed in the current frame, at its
/// post-change lines if applied), and equal normalized post content. A
/// prediction that restores an applied hunk's pre content is a revert match.
pub fn match_edit(
    p: &PredictedEdit,
    commit: &Commit,
    state: &EditState,
    opts: &MatchOptions,
) -> Result<MatchOutcome, FlowError> {
    let post = normalize_content(&p.content_post);
    let mut forward = Vec::new();
    let mut reverts = Vec::new();
    let mut near: Vec<(HunkId, f64)> = Vec::new();
    for h in commit.hunks.iter().filter(|h| h.file == p.file) {
        let applied = state.is_applied(h.id);
        let region = if applied {
            state.current_post_range(h)
        } else {
            state.current_pre_range(h)
        };
        if !overlaps(p.range(), region) {
            continue;
        }
        if post == normalize_content(&h.content_post) {
            forward.push(h.id);
        } else if applied && post == normalize_content(&h.content_pre) {
            reverts.push(h.id);
        } else if !applied {
            near.push((h.id, token_jaccard(&p.content_post, &h.content_post)));
        }
    }
    if let Some(id) = unique(forward)? {
        return Ok(MatchOutcome::Hunk(id));
    }
    if let Some(id) = unique(reverts)? {
        return Ok(MatchOutcome::RevertOf(id));
    }
    if let Some(threshold) = opts.similarity_threshold {
        let best = near
            .into_iter()
            .filter(|&(_, s)| s >= threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((id, _)) = best {
            return Ok(MatchOutcome::Hunk(id));
        }
    }
    Ok(MatchOutcome::NoMatch)
}

// The four category predicates, each stated on its own so the partition can
// be checked by counting.

pub fn is_keep(m: MatchOutcome, prior: &BTreeSet<HunkId>, succ: &BTreeSet<HunkId>) -> bool {
    matches!(m, MatchOutcome::Hunk(h) if !prior.contains(&h) && succ.contains(&h))
}

pub fn is_jump(m: MatchOutcome, prior: &BTreeSet<HunkId>, succ: &BTreeSet<HunkId>) -> bool {
    matches!(m, MatchOutcome::Hunk(h) if !prior.contains(&h) && !succ.contains(&h))
}

pub fn is_revert(m: MatchOutcome, prior: &BTreeSet<HunkId>) -> bool {
    match m {
        MatchOutcome::Hunk(h) => prior.contains(&h),
        MatchOutcome::RevertOf(_) => true,
        MatchOutcome::NoMatch => false,
    }
}

pub fn is_break(m: MatchOutcome) -> bool {
    m == MatchOutcome::NoMatch
}

/// Category of an already-matched prediction.
pub fn classify_outcome(m: MatchOutcome, prior: &BTreeSet<HunkId>, succ: &BTreeSet<HunkId>) -> FlowCategory {
    match m {
        MatchOutcome::NoMatch => FlowCategory::Break,
        MatchOutcome::RevertOf(_) => FlowCategory::Revert,
        MatchOutcome::Hunk(h) if prior.contains(&h) => FlowCategory::Revert,
        MatchOutcome::Hunk(h) if succ.contains(&h) => FlowCategory::Keep,
        MatchOutcome::Hunk(_) => FlowCategory::Jump,
    }
}

/// Matches and classifies one prediction against the current editing state.
pub fn classify(
    p: &PredictedEdit,
    prior: &BTreeSet<HunkId>,
    g: &FlowGraph,
    commit: &Commit,
    state: &EditState,
    opts: &MatchOptions,
) -> Result<(FlowCategory, MatchOutcome), FlowError> {
    let m = match_edit(p, commit, state, opts)?;
    let succ = g.successors(prior)?;
    Ok((classify_outcome(m, prior, &succ), m))
}
