//! Commits, edit hunks, commit filtering, and mutable workspaces.

pub mod diff;
pub mod git;
mod structural;
mod workspace;

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use structural::python_structural_path;
pub use workspace::{
    materialize_pre_state, splice_lines, EditState, GitTree, MemoryTree, OffsetTable, TreeSource, Workspace,
};

/// Identifier of a hunk, unique within its commit. The numeric value is the
/// hunk's index (1-based, diff order), which also defines the canonical pair
/// orientation used by label sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HunkId(pub u32);

impl fmt::Display for HunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("commit {0} is a merge commit")]
    MergeCommit(String),
    #[error("commit {0} has no parent")]
    MissingParent(String),
    #[error("commit {0} has no text hunks (binary content skipped)")]
    EmptyCommit(String),
    #[error("hunk {hunk} does not match {file} at line {line}")]
    PatchMismatch { hunk: HunkId, file: String, line: i64 },
    #[error("hunk {0} is already applied")]
    AlreadyApplied(HunkId),
    #[error("hunk {0} is not part of this commit")]
    UnknownHunk(HunkId),
    #[error("checkout failed: {0}")]
    CheckoutFailed(String),
    #[error("invalid hunk {hunk}: {reason}")]
    InvalidHunk { hunk: HunkId, reason: String },
    #[error("git {command}: {stderr}")]
    Git { command: String, stderr: String },
    #[error("cannot parse diff: {0}")]
    Diff(#[from] diff::DiffParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Number of lines in `text`; a final line without a terminator counts.
pub fn line_count(text: &str) -> u32 {
    text.split_inclusive('\n').count() as u32
}

/// An atomic contiguous change: a line range of the pre-change file and the
/// text before and after. Content keeps exact line terminators so that
/// applying hunks reproduces files byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditHunk {
    pub id: HunkId,
    pub file: String,
    /// 1-based first line of the pre-change range.
    pub line_start: u32,
    /// Last line of the range; `line_start - 1` for a pure insertion.
    pub line_end: u32,
    pub content_pre: String,
    pub content_post: String,
    #[serde(default)]
    pub structural_path: String,
}

impl EditHunk {
    pub fn pre_lines(&self) -> u32 {
        line_count(&self.content_pre)
    }

    pub fn post_lines(&self) -> u32 {
        line_count(&self.content_post)
    }

    pub fn is_insertion(&self) -> bool {
        self.content_pre.is_empty()
    }

    pub fn is_deletion(&self) -> bool {
        self.content_post.is_empty()
    }

    /// Change in file length caused by applying this hunk.
    pub fn delta(&self) -> i64 {
        self.post_lines() as i64 - self.pre_lines() as i64
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| CorpusError::InvalidHunk {
            hunk: self.id,
            reason: reason.to_string(),
        };
        if self.content_pre.is_empty() && self.content_post.is_empty() {
            return Err(bad("pre and post content are both empty"));
        }
        if self.line_start == 0 {
            return Err(bad("line numbers are 1-based"));
        }
        if self.line_start > self.line_end + 1 {
            return Err(bad("line_start exceeds line_end + 1"));
        }
        if self.line_end + 1 - self.line_start != self.pre_lines() {
            return Err(bad("line range disagrees with pre content"));
        }
        Ok(())
    }
}

/// Swaps pre and post content. The range is expressed in the frame where
/// `h` alone has been applied, so `invert(invert(h)) == h`.
pub fn invert_hunk(h: &EditHunk) -> EditHunk {
    let post_lines = h.post_lines();
    EditHunk {
        id: h.id,
        file: h.file.clone(),
        line_start: h.line_start,
        line_end: h.line_start + post_lines - 1,
        content_pre: h.content_post.clone(),
        content_post: h.content_pre.clone(),
        structural_path: h.structural_path.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum FileStatus {
    Modified,
    Added,
    Deleted,
    Renamed { from: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: String,
    #[serde(flatten)]
    pub status: FileStatus,
    #[serde(default)]
    pub binary: bool,
}

fn one() -> usize {
    1
}

/// A single-parent commit and its edit hunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commit {
    pub commit_id: String,
    pub parent_id: String,
    pub message: String,
    pub hunks: Vec<EditHunk>,
    /// Local path of the working clone the commit came from.
    pub repo: String,
    #[serde(default)]
    pub files: Vec<FileChange>,
    #[serde(default = "one")]
    pub parent_count: usize,
}

impl Commit {
    pub fn hunk(&self, id: HunkId) -> Option<&EditHunk> {
        self.hunks.iter().find(|h| h.id == id)
    }

    pub fn hunk_ids(&self) -> Vec<HunkId> {
        self.hunks.iter().map(|h| h.id).collect()
    }

    pub fn touched_files(&self) -> BTreeSet<&str> {
        self.hunks.iter().map(|h| h.file.as_str()).collect()
    }

    pub fn repo_path(&self) -> PathBuf {
        PathBuf::from(&self.repo)
    }

    /// Size of the space of possible hunk orderings, `n!`. `None` on overflow.
    pub fn sequence_space(&self) -> Option<u128> {
        (1..=self.hunks.len() as u128).try_fold(1u128, |acc, k| acc.checked_mul(k))
    }

    pub fn summary(&self) -> CommitSummary {
        CommitSummary {
            commit_id: self.commit_id.clone(),
            hunk_count: self.hunks.len(),
            file_count: self.touched_files().len(),
            sequence_space: self.sequence_space().map(|n| n.to_string()),
        }
    }

    /// Checks hunk invariants, id uniqueness, and per-file disjointness.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut ids = BTreeSet::new();
        for h in &self.hunks {
            h.validate()?;
            if !ids.insert(h.id) {
                return Err(CorpusError::InvalidHunk {
                    hunk: h.id,
                    reason: "duplicate id".into(),
                });
            }
        }
        for a in &self.hunks {
            for b in &self.hunks {
                if a.id < b.id && a.file == b.file && ranges_collide(a, b) {
                    return Err(CorpusError::InvalidHunk {
                        hunk: b.id,
                        reason: format!("range overlaps {}", a.id),
                    });
                }
            }
        }
        Ok(())
    }
}

fn ranges_collide(a: &EditHunk, b: &EditHunk) -> bool {
    // Two insertions at the same point are ambiguous; otherwise empty ranges
    // never collide.
    if a.is_insertion() && b.is_insertion() {
        return a.line_start == b.line_start;
    }
    a.line_start <= b.line_end && b.line_start <= a.line_end
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitSummary {
    pub commit_id: String,
    pub hunk_count: usize,
    pub file_count: usize,
    /// `n!` as a decimal string (it outgrows 64 bits quickly).
    pub sequence_space: Option<String>,
}

/// Benchmark commit-selection criteria.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CommitFilter {
    pub min_hunks: usize,
    pub max_hunks: usize,
    pub min_files: usize,
    pub require_ascii: bool,
    pub reject_merges: bool,
    pub reject_renames: bool,
}

impl Default for CommitFilter {
    fn default() -> Self {
        Self {
            min_hunks: 5,
            max_hunks: 10,
            min_files: 2,
            require_ascii: true,
            reject_merges: true,
            reject_renames: true,
        }
    }
}

impl CommitFilter {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_hunks > self.max_hunks {
            return Err(format!(
                "min_hunks ({}) exceeds max_hunks ({})",
                self.min_hunks, self.max_hunks
            ));
        }
        Ok(())
    }
}

pub fn passes_filter(commit: &Commit, f: &CommitFilter) -> bool {
    let n = commit.hunks.len();
    if n < f.min_hunks || n > f.max_hunks {
        return false;
    }
    if commit.touched_files().len() < f.min_files {
        return false;
    }
    if f.require_ascii
        && !commit
            .hunks
            .iter()
            .all(|h| h.content_pre.is_ascii() && h.content_post.is_ascii() && h.file.is_ascii())
    {
        return false;
    }
    if f.reject_merges && commit.parent_count > 1 {
        return false;
    }
    if f.reject_renames && commit.files.iter().any(|c| matches!(c.status, FileStatus::Renamed { .. })) {
        return false;
    }
    true
}
