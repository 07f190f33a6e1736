//! Commit extraction by invoking the `git` executable.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use super::diff::{parse_unified_diff, FileOp};
use super::{python_structural_path, Commit, CorpusError, EditHunk, FileChange, FileStatus, HunkId};

fn git(repo: &Path, args: &[&str]) -> Result<Vec<u8>, CorpusError> {
    let output = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["-c", "core.quotepath=false", "-c", "diff.noprefix=false", "-c", "diff.mnemonicPrefix=false"])
        .args(args)
        .output()?;
    if !output.status.success() {
        return Err(CorpusError::Git {
            command: args.join(" "),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    Ok(output.stdout)
}

fn git_text(repo: &Path, args: &[&str]) -> Result<String, CorpusError> {
    Ok(String::from_utf8_lossy(&git(repo, args)?).into_owned())
}

/// True when `repo` is inside a git work tree.
pub fn is_repository(repo: &Path) -> bool {
    repo.is_dir() && git(repo, &["rev-parse", "--git-dir"]).is_ok()
}

pub fn resolve(repo: &Path, rev: &str) -> Result<String, CorpusError> {
    Ok(git_text(repo, &["rev-parse", "--verify", &format!("{rev}^{{commit}}")])?
        .trim()
        .to_string())
}

/// Parent ids of `rev`, in git's order.
pub fn parents(repo: &Path, rev: &str) -> Result<Vec<String>, CorpusError> {
    let line = git_text(repo, &["rev-list", "--parents", "-n", "1", rev])?;
    Ok(line.split_whitespace().skip(1).map(str::to_string).collect())
}

/// Commits in `range` (anything `git rev-list` accepts), oldest first.
pub fn rev_list(repo: &Path, range: &str) -> Result<Vec<String>, CorpusError> {
    let out = git_text(repo, &["rev-list", "--reverse", range])?;
    Ok(out.lines().map(str::to_string).collect())
}

/// File contents at `rev`, or `None` if the path does not exist there.
pub fn show_file(repo: &Path, rev: &str, path: &str) -> Result<Option<Vec<u8>>, CorpusError> {
    let spec = format!("{rev}:{path}");
    if git(repo, &["cat-file", "-e", &spec]).is_err() {
        return Ok(None);
    }
    git(repo, &["cat-file", "blob", &spec]).map(Some)
}

/// Raw zero-context diff between two revisions, renames disabled.
pub fn diff_zero_context(repo: &Path, from: &str, to: &str) -> Result<Vec<u8>, CorpusError> {
    git(
        repo,
        &["diff", "--no-color", "--no-ext-diff", "--no-renames", "-U0", from, to, "--"],
    )
}

fn renames(repo: &Path, from: &str, to: &str) -> Result<BTreeMap<String, String>, CorpusError> {
    let out = git_text(repo, &["diff", "--name-status", "-M", from, to, "--"])?;
    let mut map = BTreeMap::new();
    for line in out.lines() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() == 3 && parts[0].starts_with('R') {
            map.insert(parts[2].to_string(), parts[1].to_string());
        }
    }
    Ok(map)
}

/// Builds a [`Commit`] from a single-parent revision. Each zero-context diff
/// region becomes one hunk; binary files are skipped.
pub fn extract_commit(repo: &Path, rev: &str) -> Result<Commit, CorpusError> {
    let commit_id = resolve(repo, rev)?;
    let parent_ids = parents(repo, &commit_id)?;
    let parent_id = match parent_ids.as_slice() {
        [] => return Err(CorpusError::MissingParent(commit_id)),
        [p] => p.clone(),
        _ => return Err(CorpusError::MergeCommit(commit_id)),
    };
    let message = git_text(repo, &["log", "-1", "--format=%B", &commit_id])?
        .trim_end()
        .to_string();

    let raw = diff_zero_context(repo, &parent_id, &commit_id)?;
    let (text, lossy) = match String::from_utf8(raw) {
        Ok(t) => (t, false),
        Err(e) => (String::from_utf8_lossy(e.as_bytes()).into_owned(), true),
    };
    let file_diffs = parse_unified_diff(&text)?;
    let renamed = renames(repo, &parent_id, &commit_id)?;

    let mut hunks = Vec::new();
    let mut files = Vec::new();
    let mut next_id = 1u32;
    for fd in &file_diffs {
        let path = fd.path().to_string();
        let undecodable = lossy && fd.hunks.iter().any(|h| h.lines.iter().any(|l| l.text.contains('\u{FFFD}')));
        let binary = fd.binary || undecodable;
        let status = match (fd.op, renamed.get(&path)) {
            (FileOp::Added, Some(from)) => FileStatus::Renamed { from: from.clone() },
            (FileOp::Added, None) => FileStatus::Added,
            (FileOp::Deleted, _) => FileStatus::Deleted,
            (FileOp::Renamed, _) => FileStatus::Renamed {
                from: fd.old_path.clone().unwrap_or_default(),
            },
            (FileOp::Modified, _) => FileStatus::Modified,
        };
        files.push(FileChange {
            path: path.clone(),
            status,
            binary,
        });
        if binary {
            continue;
        }
        let pre_text = if path.ends_with(".py") {
            show_file(repo, &parent_id, &path)?.map(|b| String::from_utf8_lossy(&b).into_owned())
        } else {
            None
        };
        for dh in &fd.hunks {
            for region in dh.change_regions() {
                let line_start = region.old_start;
                let line_end = line_start + region.old_len - 1;
                let structural_path = pre_text
                    .as_deref()
                    .map(|t| python_structural_path(t, line_start, first_code_line(&region.removed, &region.added)))
                    .unwrap_or_default();
                hunks.push(EditHunk {
                    id: HunkId(next_id),
                    file: path.clone(),
                    line_start,
                    line_end,
                    content_pre: region.removed,
                    content_post: region.added,
                    structural_path,
                });
                next_id += 1;
            }
        }
    }
    if hunks.is_empty() {
        return Err(CorpusError::EmptyCommit(commit_id));
    }
    Ok(Commit {
        commit_id,
        parent_id,
        message,
        hunks,
        repo: repo.display().to_string(),
        files,
        parent_count: 1,
    })
}

fn first_code_line<'a>(removed: &'a str, added: &'a str) -> &'a str {
    removed
        .lines()
        .chain(added.lines())
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
}
