//! Parser for git-flavoured unified diffs.
//!
//! Handles `diff --git` file headers, `---`/`+++` path lines, `@@` hunk
//! headers with optional lengths, `\ No newline at end of file` markers,
//! binary-file notices, and new/deleted/renamed file metadata. Hunk bodies
//! may carry any amount of context; [`DiffHunk::change_regions`] splits them
//! into zero-context regions.

use std::fmt;

/// Error produced while parsing a unified diff.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for DiffParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "diff line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for DiffParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Context,
    Removed,
    Added,
}

/// One body line of a hunk. `text` keeps its line terminator unless the
/// diff marked the line with `\ No newline at end of file`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffLine {
    pub kind: LineKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffHunk {
    pub old_start: u32,
    pub old_len: u32,
    pub new_start: u32,
    pub new_len: u32,
    pub lines: Vec<DiffLine>,
}

/// A contiguous changed region with no context, in old-file coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeRegion {
    /// 1-based first replaced line; for a pure insertion, the line the new
    /// text is inserted before.
    pub old_start: u32,
    pub old_len: u32,
    pub new_start: u32,
    pub new_len: u32,
    pub removed: String,
    pub added: String,
}

impl DiffHunk {
    /// Splits the hunk into maximal runs of removed/added lines.
    pub fn change_regions(&self) -> Vec<ChangeRegion> {
        let mut regions = Vec::new();
        // Position of the next old/new line, 1-based.
        let mut old_line = if self.old_len == 0 { self.old_start + 1 } else { self.old_start };
        let mut new_line = if self.new_len == 0 { self.new_start + 1 } else { self.new_start };
        let mut current: Option<ChangeRegion> = None;

        for line in &self.lines {
            match line.kind {
                LineKind::Context => {
                    if let Some(region) = current.take() {
                        regions.push(region);
                    }
                    old_line += 1;
                    new_line += 1;
                }
                LineKind::Removed | LineKind::Added => {
                    let region = current.get_or_insert_with(|| ChangeRegion {
                        old_start: old_line,
                        old_len: 0,
                        new_start: new_line,
                        new_len: 0,
                        removed: String::new(),
                        added: String::new(),
                    });
                    if line.kind == LineKind::Removed {
                        region.old_len += 1;
                        region.removed.push_str(&line.text);
                        old_line += 1;
                    } else {
                        region.new_len += 1;
                        region.added.push_str(&line.text);
                        new_line += 1;
                    }
                }
            }
        }
        if let Some(region) = current {
            regions.push(region);
        }
        regions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileOp {
    Modified,
    Added,
    Deleted,
    Renamed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDiff {
    /// Path before the change; `None` for added files.
    pub old_path: Option<String>,
    /// Path after the change; `None` for deleted files.
    pub new_path: Option<String>,
    pub op: FileOp,
    pub binary: bool,
    pub hunks: Vec<DiffHunk>,
}

impl FileDiff {
    /// The path a hunk of this file is addressed by.
    pub fn path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or_default()
    }
}

/// Parses a complete diff (possibly several files).
pub fn parse_unified_diff(input: &str) -> Result<Vec<FileDiff>, DiffParseError> {
    let lines: Vec<&str> = input.split_inclusive('\n').collect();
    let mut files: Vec<FileDiff> = Vec::new();
    let mut i = 0;

    while i < lines.len() {
        let raw = lines[i];
        let line = strip_eol(raw);
        if let Some(rest) = line.strip_prefix("diff --git ") {
            let (a, b) = split_git_header_paths(rest);
            files.push(FileDiff {
                old_path: a,
                new_path: b,
                op: FileOp::Modified,
                binary: false,
                hunks: Vec::new(),
            });
            i += 1;
            continue;
        }
        if line.starts_with("--- ") && i + 1 < lines.len() && strip_eol(lines[i + 1]).starts_with("+++ ")
        {
            let old = parse_path_line(&line[4..]);
            let new = parse_path_line(&strip_eol(lines[i + 1])[4..]);
            let file = match files.last_mut() {
                // A bare `---/+++` pair without a git header starts a new file.
                Some(f) if f.hunks.is_empty() => f,
                _ => {
                    files.push(FileDiff {
                        old_path: old.clone(),
                        new_path: new.clone(),
                        op: FileOp::Modified,
                        binary: false,
                        hunks: Vec::new(),
                    });
                    files.last_mut().unwrap()
                }
            };
            file.old_path = old;
            file.new_path = new;
            if file.old_path.is_none() {
                file.op = FileOp::Added;
            } else if file.new_path.is_none() {
                file.op = FileOp::Deleted;
            }
            i += 2;
            continue;
        }
        if line.starts_with("@@") {
            let file = files.last_mut().ok_or_else(|| DiffParseError {
                line: i + 1,
                message: "hunk header before any file header".into(),
            })?;
            let (hunk, next) = parse_hunk(&lines, i)?;
            file.hunks.push(hunk);
            i = next;
            continue;
        }
        if let Some(file) = files.last_mut() {
            if line.starts_with("new file mode") {
                file.op = FileOp::Added;
                file.old_path = None;
            } else if line.starts_with("deleted file mode") {
                file.op = FileOp::Deleted;
                file.new_path = None;
            } else if let Some(p) = line.strip_prefix("rename from ") {
                file.op = FileOp::Renamed;
                file.old_path = Some(unquote(p));
            } else if let Some(p) = line.strip_prefix("rename to ") {
                file.op = FileOp::Renamed;
                file.new_path = Some(unquote(p));
            } else if line.starts_with("Binary files ") || line.starts_with("GIT binary patch") {
                file.binary = true;
            }
        }
        i += 1;
    }
    Ok(files)
}

fn parse_hunk(lines: &[&str], start: usize) -> Result<(DiffHunk, usize), DiffParseError> {
    let header = strip_eol(lines[start]);
    let err = |message: &str| DiffParseError {
        line: start + 1,
        message: message.to_string(),
    };
    let body = header
        .strip_prefix("@@ ")
        .ok_or_else(|| err("malformed hunk header"))?;
    let end = body.find(" @@").ok_or_else(|| err("unterminated hunk header"))?;
    let mut ranges = body[..end].split(' ');
    let old = ranges
        .next()
        .and_then(|r| r.strip_prefix('-'))
        .ok_or_else(|| err("missing old range"))?;
    let new = ranges
        .next()
        .and_then(|r| r.strip_prefix('+'))
        .ok_or_else(|| err("missing new range"))?;
    let (old_start, old_len) = parse_range(old).ok_or_else(|| err("bad old range"))?;
    let (new_start, new_len) = parse_range(new).ok_or_else(|| err("bad new range"))?;

    let mut hunk = DiffHunk {
        old_start,
        old_len,
        new_start,
        new_len,
        lines: Vec::new(),
    };
    let (mut old_seen, mut new_seen) = (0u32, 0u32);
    let mut i = start + 1;
    while i < lines.len() && (old_seen < old_len || new_seen < new_len) {
        let raw = lines[i];
        let (kind, text) = match raw.as_bytes().first() {
            Some(b' ') => (LineKind::Context, &raw[1..]),
            Some(b'-') => (LineKind::Removed, &raw[1..]),
            Some(b'+') => (LineKind::Added, &raw[1..]),
            Some(b'\\') => {
                strip_last_newline(&mut hunk.lines);
                i += 1;
                continue;
            }
            // Some tools drop the leading space of empty context lines.
            Some(b'\n') | Some(b'\r') => (LineKind::Context, raw),
            _ => {
                return Err(DiffParseError {
                    line: i + 1,
                    message: format!("unexpected line in hunk body: {:?}", strip_eol(raw)),
                })
            }
        };
        match kind {
            LineKind::Context => {
                old_seen += 1;
                new_seen += 1;
            }
            LineKind::Removed => old_seen += 1,
            LineKind::Added => new_seen += 1,
        }
        hunk.lines.push(DiffLine {
            kind,
            text: text.to_string(),
        });
        i += 1;
    }
    if old_seen != old_len || new_seen != new_len {
        return Err(err("hunk body shorter than its header"));
    }
    // A trailing no-newline marker belongs to the last body line.
    if i < lines.len() && lines[i].starts_with('\\') {
        strip_last_newline(&mut hunk.lines);
        i += 1;
    }
    Ok((hunk, i))
}

fn strip_last_newline(lines: &mut [DiffLine]) {
    if let Some(last) = lines.last_mut() {
        if last.text.ends_with('\n') {
            last.text.pop();
            if last.text.ends_with('\r') {
                last.text.pop();
            }
        }
    }
}

fn parse_range(r: &str) -> Option<(u32, u32)> {
    match r.split_once(',') {
        Some((s, l)) => Some((s.parse().ok()?, l.parse().ok()?)),
        None => Some((r.parse().ok()?, 1)),
    }
}

fn strip_eol(line: &str) -> &str {
    line.strip_suffix('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .unwrap_or(line)
}

fn parse_path_line(rest: &str) -> Option<String> {
    // Drop a trailing tab-separated timestamp.
    let path = rest.split('\t').next().unwrap_or(rest).trim_end();
    if path == "/dev/null" {
        return None;
    }
    let path = unquote(path);
    Some(
        path.strip_prefix("a/")
            .or_else(|| path.strip_prefix("b/"))
            .map(str::to_string)
            .unwrap_or(path),
    )
}

fn split_git_header_paths(rest: &str) -> (Option<String>, Option<String>) {
    // `a/<path> b/<path>`; paths are equal on both sides unless renamed, in
    // which case the `rename from/to` lines fix them up.
    if let Some(idx) = rest.find(" b/") {
        let a = rest[..idx].trim_start_matches("a/");
        let b = &rest[idx + 3..];
        (Some(unquote(a)), Some(unquote(b)))
    } else {
        (None, None)
    }
}

fn unquote(p: &str) -> String {
    let p = p.trim();
    if p.len() >= 2 && p.starts_with('"') && p.ends_with('"') {
        let inner = &p[1..p.len() - 1];
        let mut out = String::with_capacity(inner.len());
        let mut chars = inner.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(other) => out.push(other),
                    None => {}
                }
            } else {
                out.push(c);
            }
        }
        out
    } else {
        p.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_REGIONS: &str = "diff --git a/src/app.py b/src/app.py
index 1111111..2222222 100644
--- a/src/app.py
+++ b/src/app.py
@@ -2 +2 @@ def main():
-    x = 1
+    x = 2
@@ -10,0 +11,2 @@ def main():
+    y = 3
+    z = 4
";

    #[test]
    fn zero_context_hunks() {
        let files = parse_unified_diff(TWO_REGIONS).unwrap();
        assert_eq!(files.len(), 1);
        let f = &files[0];
        assert_eq!(f.path(), "src/app.py");
        assert_eq!(f.hunks.len(), 2);
        let r0 = f.hunks[0].change_regions();
        assert_eq!(r0.len(), 1);
        assert_eq!((r0[0].old_start, r0[0].old_len), (2, 1));
        assert_eq!(r0[0].removed, "    x = 1\n");
        let r1 = f.hunks[1].change_regions();
        // pure insertion after line 10 means "before line 11"
        assert_eq!((r1[0].old_start, r1[0].old_len), (11, 0));
        assert_eq!(r1[0].added, "    y = 3\n    z = 4\n");
    }

    #[test]
    fn context_hunk_splits_into_regions() {
        let diff = "--- a/f.txt
+++ b/f.txt
@@ -1,7 +1,7 @@
 one
-two
+TWO
 three
 four
 five
-six
+SIX
 seven
";
        let files = parse_unified_diff(diff).unwrap();
        let regions = files[0].hunks[0].change_regions();
        assert_eq!(regions.len(), 2);
        assert_eq!(regions[0].old_start, 2);
        assert_eq!(regions[1].old_start, 6);
        assert_eq!(regions[1].new_start, 6);
    }

    #[test]
    fn no_newline_marker() {
        let diff = "diff --git a/x b/x
--- a/x
+++ b/x
@@ -1 +1 @@
-old
\\ No newline at end of file
+new
\\ No newline at end of file
";
        let files = parse_unified_diff(diff).unwrap();
        let lines = &files[0].hunks[0].lines;
        assert_eq!(lines[0].text, "old");
        assert_eq!(lines[1].text, "new");
    }

    #[test]
    fn new_deleted_binary_renamed() {
        let diff = "diff --git a/new.txt b/new.txt
new file mode 100644
index 0000000..3b18e51
--- /dev/null
+++ b/new.txt
@@ -0,0 +1 @@
+hello
diff --git a/gone.txt b/gone.txt
deleted file mode 100644
--- a/gone.txt
+++ /dev/null
@@ -1 +0,0 @@
-bye
diff --git a/img.png b/img.png
Binary files a/img.png and b/img.png differ
diff --git a/old name.txt b/new name.txt
similarity index 100%
rename from old name.txt
rename to new name.txt
";
        let files = parse_unified_diff(diff).unwrap();
        assert_eq!(files.len(), 4);
        assert_eq!(files[0].op, FileOp::Added);
        assert_eq!(files[0].path(), "new.txt");
        let r = files[0].hunks[0].change_regions();
        assert_eq!((r[0].old_start, r[0].old_len), (1, 0));
        assert_eq!(files[1].op, FileOp::Deleted);
        assert_eq!(files[1].path(), "gone.txt");
        assert!(files[2].binary);
        assert_eq!(files[3].op, FileOp::Renamed);
        assert_eq!(files[3].old_path.as_deref(), Some("old name.txt"));
        assert_eq!(files[3].new_path.as_deref(), Some("new name.txt"));
    }

    #[test]
    fn truncated_hunk_is_an_error() {
        let diff = "--- a/f\n+++ b/f\n@@ -1,3 +1,3 @@\n a\n-b\n";
        assert!(parse_unified_diff(diff).is_err());
    }
}
