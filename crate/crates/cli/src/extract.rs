use std::path::{Path, PathBuf};

use editflow_core::corpus::git::{extract_commit, is_repository, resolve, rev_list};
use editflow_core::corpus::{passes_filter, Commit, CorpusError};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::HarnessConfig;
use crate::error::{CliError, CliResult, Classify};
use crate::store::{write_json, Store};
use crate::Outcome;

#[derive(Debug, Serialize)]
struct Rejection {
    commit: String,
    reason: String,
}

enum Verdict {
    Cached,
    Accepted(Box<Commit>),
    Rejected(Rejection),
}

fn examine(repo: &Path, rev: &str, store: &Store, cfg: &HarnessConfig, force: bool) -> CliResult<Verdict> {
    let id = resolve(repo, rev).or_external(format!("cannot resolve {rev}"))?;
    if !force && store.commit_path(&id).exists() {
        return Ok(Verdict::Cached);
    }
    let reject = |reason: String| Ok(Verdict::Rejected(Rejection { commit: id.clone(), reason }));
    let commit = match extract_commit(repo, &id) {
        Ok(c) => c,
        Err(
            e @ (CorpusError::MergeCommit(_)
            | CorpusError::MissingParent(_)
            | CorpusError::EmptyCommit(_)
            | CorpusError::Diff(_)
            | CorpusError::InvalidHunk { .. }),
        ) => return reject(e.to_string()),
        Err(e) => return Err(e).or_external(format!("cannot extract {id}")),
    };
    if let Err(e) = commit.validate() {
        return reject(e.to_string());
    }
    if !passes_filter(&commit, &cfg.corpus.filter) {
        return reject(format!(
            "selection criteria ({} hunks, {} files)",
            commit.hunks.len(),
            commit.touched_files().len()
        ));
    }
    Ok(Verdict::Accepted(Box::new(commit)))
}

pub fn run(cfg: &HarnessConfig, repo: Option<PathBuf>, range: Option<String>, force: bool) -> CliResult<Outcome> {
    let repos = match repo {
        Some(r) => vec![r],
        None if cfg.corpus.repos.is_empty() => {
            return Err(CliError::config("no repository given (use --repo or corpus.repos)"));
        }
        None => cfg.corpus.repos.clone(),
    };
    let store = Store::new(&cfg.output_dir);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads())
        .build()
        .or_external("cannot start worker pool")?;

    let (mut accepted, mut cached, mut rejected) = (Vec::new(), 0usize, Vec::new());
    for repo in &repos {
        if !is_repository(repo) {
            return Err(CliError::config(format!("{} is not a git repository", repo.display())));
        }
        let revs = if range.is_none() && !cfg.corpus.commits.is_empty() {
            cfg.corpus.commits.clone()
        } else {
            let r = range.clone().or_else(|| cfg.corpus.range.clone()).unwrap_or_else(|| "HEAD".into());
            rev_list(repo, &r).or_config(format!("bad revision range {r:?}"))?
        };
        let verdicts: Vec<CliResult<Verdict>> =
            pool.install(|| revs.par_iter().map(|rev| examine(repo, rev, &store, cfg, force)).collect());
        for v in verdicts {
            match v? {
                Verdict::Cached => cached += 1,
                Verdict::Accepted(c) => {
                    write_json(&store.commit_path(&c.commit_id), &*c)?;
                    accepted.push(c.commit_id.clone());
                }
                Verdict::Rejected(r) => {
                    log::info!("rejected {}: {}", r.commit, r.reason);
                    rejected.push(r);
                }
            }
        }
    }
    let text = format!(
        "accepted {} (cached {}), rejected {}",
        accepted.len() + cached,
        cached,
        rejected.len()
    );
    Ok(Outcome::ok(
        text,
        json!({
            "accepted": accepted.len() + cached,
            "written": accepted,
            "cached": cached,
            "rejected": rejected,
        }),
    ))
}
