use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{git, Commit, CorpusError, EditHunk, HunkId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Span {
    hunk: HunkId,
    line_start: u32,
    line_end: u32,
    delta: i64,
}

/// Per-file record of applied hunks, in pre-change coordinates. Maps a
/// pre-change line to its current position.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffsetTable {
    files: BTreeMap<String, Vec<Span>>,
}

impl OffsetTable {
    fn record(&mut self, h: &EditHunk) {
        let spans = self.files.entry(h.file.clone()).or_default();
        let span = Span {
            hunk: h.id,
            line_start: h.line_start,
            line_end: h.line_end,
            delta: h.delta(),
        };
        let pos = spans
            .iter()
            .position(|s| (s.line_start, s.line_end) > (span.line_start, span.line_end))
            .unwrap_or(spans.len());
        spans.insert(pos, span);
    }

    /// Sum of deltas of applied hunks lying strictly above `line`.
    pub fn shift_before(&self, file: &str, line: u32, exclude: Option<HunkId>) -> i64 {
        self.files
            .get(file)
            .map(|spans| {
                spans
                    .iter()
                    .filter(|s| Some(s.hunk) != exclude && (s.line_end as i64) < line as i64)
                    .map(|s| s.delta)
                    .sum()
            })
            .unwrap_or(0)
    }

    /// Current line of an unedited pre-change line.
    pub fn remap(&self, file: &str, line: u32) -> i64 {
        line as i64 + self.shift_before(file, line, None)
    }

    pub fn is_empty(&self) -> bool {
        self.files.values().all(Vec::is_empty)
    }
}

/// Which hunks have been applied and where everything now sits. Depends only
/// on the set of applied hunks, not on the order they were applied in.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditState {
    pub offsets: OffsetTable,
    pub applied: Vec<HunkId>,
}

impl EditState {
    pub fn from_applied(commit: &Commit, ids: &[HunkId]) -> Result<Self, CorpusError> {
        let mut state = Self::default();
        for &id in ids {
            let h = commit.hunk(id).ok_or(CorpusError::UnknownHunk(id))?;
            state.record(h)?;
        }
        Ok(state)
    }

    pub fn is_applied(&self, id: HunkId) -> bool {
        self.applied.contains(&id)
    }

    fn record(&mut self, h: &EditHunk) -> Result<(), CorpusError> {
        if self.is_applied(h.id) {
            return Err(CorpusError::AlreadyApplied(h.id));
        }
        self.offsets.record(h);
        self.applied.push(h.id);
        Ok(())
    }

    fn own_start(&self, h: &EditHunk) -> i64 {
        h.line_start as i64 + self.offsets.shift_before(&h.file, h.line_start, Some(h.id))
    }

    /// Where `h`'s pre-change lines sit now, as `(start, end)`; `end` is
    /// `start - 1` for insertions.
    pub fn current_pre_range(&self, h: &EditHunk) -> (i64, i64) {
        let start = self.own_start(h);
        (start, start + h.pre_lines() as i64 - 1)
    }

    /// Where `h`'s post-change lines sit once applied.
    pub fn current_post_range(&self, h: &EditHunk) -> (i64, i64) {
        let start = self.own_start(h);
        (start, start + h.post_lines() as i64 - 1)
    }

    /// `h` translated into current coordinates, keeping its pre/post text.
    pub fn current_frame(&self, h: &EditHunk) -> EditHunk {
        let (start, end) = self.current_pre_range(h);
        EditHunk {
            line_start: start.max(1) as u32,
            line_end: end.max(0) as u32,
            ..h.clone()
        }
    }
}

/// Replaces the `pre` lines found at 1-based `start` in `text` with `post`.
/// Lines are compared with trailing whitespace stripped. Returns the first
/// mismatching line on failure.
pub fn splice_lines(text: &str, start: i64, pre: &str, post: &str) -> Result<String, i64> {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let pre_lines: Vec<&str> = pre.split_inclusive('\n').collect();
    if start < 1 || (start - 1) as usize > lines.len() {
        return Err(start);
    }
    let at = (start - 1) as usize;
    if at + pre_lines.len() > lines.len() {
        return Err(start + (lines.len() - at) as i64);
    }
    for (k, expected) in pre_lines.iter().enumerate() {
        if lines[at + k].trim_end() != expected.trim_end() {
            return Err(start + k as i64);
        }
    }
    let mut out = String::with_capacity(text.len() + post.len());
    for l in &lines[..at] {
        out.push_str(l);
    }
    out.push_str(post);
    for l in &lines[at + pre_lines.len()..] {
        out.push_str(l);
    }
    Ok(out)
}

/// Source of pre-change file contents.
pub trait TreeSource {
    /// Contents of `path` in the commit's parent revision, `None` if absent.
    fn read_pre(&self, commit: &Commit, path: &str) -> Result<Option<Vec<u8>>, CorpusError>;
}

/// Reads parent-revision files out of a git repository.
#[derive(Debug, Clone)]
pub struct GitTree {
    pub repo: PathBuf,
}

impl GitTree {
    pub fn new(repo: impl Into<PathBuf>) -> Self {
        Self { repo: repo.into() }
    }
}

impl TreeSource for GitTree {
    fn read_pre(&self, commit: &Commit, path: &str) -> Result<Option<Vec<u8>>, CorpusError> {
        git::show_file(&self.repo, &commit.parent_id, path)
    }
}

/// In-memory parent tree, for synthetic commits.
#[derive(Debug, Clone, Default)]
pub struct MemoryTree {
    pub files: BTreeMap<String, String>,
}

impl TreeSource for MemoryTree {
    fn read_pre(&self, _commit: &Commit, path: &str) -> Result<Option<Vec<u8>>, CorpusError> {
        Ok(self.files.get(path).map(|s| s.as_bytes().to_vec()))
    }
}

/// A materialized file tree that hunks are applied to one at a time.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub state: EditState,
}

impl Workspace {
    pub fn applied(&self) -> &[HunkId] {
        &self.state.applied
    }

    pub fn offsets(&self) -> &OffsetTable {
        &self.state.offsets
    }

    /// Current contents of `path`; a missing file reads as empty.
    pub fn read_file(&self, path: &str) -> Result<String, CorpusError> {
        match fs::read(self.root.join(path)) {
            Ok(bytes) => Ok(String::from_utf8_lossy(&bytes).into_owned()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(String::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn apply_hunk(&mut self, h: &EditHunk) -> Result<(), CorpusError> {
        if self.state.is_applied(h.id) {
            return Err(CorpusError::AlreadyApplied(h.id));
        }
        let text = self.read_file(&h.file)?;
        let (start, _) = self.state.current_pre_range(h);
        let updated = splice_lines(&text, start, &h.content_pre, &h.content_post).map_err(|line| {
            CorpusError::PatchMismatch {
                hunk: h.id,
                file: h.file.clone(),
                line,
            }
        })?;
        let path = self.root.join(&h.file);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, updated)?;
        self.state.record(h)
    }
}

/// Writes the parent-revision contents of every file the commit touches
/// into `dest` (which must be empty or absent).
pub fn materialize_pre_state(
    commit: &Commit,
    source: &dyn TreeSource,
    dest: &Path,
) -> Result<Workspace, CorpusError> {
    let failed = |e: &dyn std::fmt::Display| CorpusError::CheckoutFailed(format!("{}: {e}", dest.display()));
    if dest.exists() {
        let mut entries = fs::read_dir(dest).map_err(|e| failed(&e))?;
        if entries.next().is_some() {
            return Err(CorpusError::CheckoutFailed(format!("{} is not empty", dest.display())));
        }
    } else {
        fs::create_dir_all(dest).map_err(|e| failed(&e))?;
    }
    let mut paths: Vec<&str> = commit.touched_files().into_iter().collect();
    for change in &commit.files {
        if !change.binary && !paths.contains(&change.path.as_str()) {
            paths.push(&change.path);
        }
    }
    for path in paths {
        let contents = source
            .read_pre(commit, path)
            .map_err(|e| CorpusError::CheckoutFailed(format!("{path}: {e}")))?;
        if let Some(bytes) = contents {
            let target = dest.join(path);
            if let Some(dir) = target.parent() {
                fs::create_dir_all(dir).map_err(|e| failed(&e))?;
            }
            fs::write(&target, bytes).map_err(|e| failed(&e))?;
        }
    }
    Ok(Workspace {
        root: dest.to_path_buf(),
        state: EditState::default(),
    })
}
