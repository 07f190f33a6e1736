use std::path::Path;

use editflow_core::corpus::Commit;
use editflow_core::gateway::UsageRecord;
use editflow_core::recovery::{infer_graph, InferGraphError, InferOptions, PromptCandidate};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{GatewayFactory, HarnessConfig};
use crate::error::{CliError, CliResult, Classify};
use crate::store::{read_json, write_json, GraphFile, Store};
use crate::Outcome;

enum Done {
    Skipped,
    TooSmall,
    Inferred { calls: usize },
    Failed(String),
}

fn infer_one(
    commit: &Commit,
    store: &Store,
    prompt: &PromptCandidate,
    gateways: &GatewayFactory,
    opts: &InferOptions,
    force: bool,
) -> CliResult<Done> {
    let path = store.graph_path(&commit.commit_id);
    let previous: Option<GraphFile> = if path.exists() && !force { Some(read_json(&path)?) } else { None };
    if previous.as_ref().is_some_and(|g| g.complete) {
        return Ok(Done::Skipped);
    }
    if commit.hunks.len() < 2 {
        log::warn!("skipping {}: fewer than two hunks", commit.commit_id);
        return Ok(Done::TooSmall);
    }
    let resume = previous.as_ref().map(GraphFile::labels);
    let (prior_calls, prior_usage) = previous.map_or((0, UsageRecord::default()), |g| (g.calls, g.usage));
    let gw = gateways.build();
    let result = infer_graph(prompt, commit, &gw, opts, resume);
    let mut usage = prior_usage;
    usage.add(&gw.usage_since(0));
    let (file, done) = match result {
        Ok(r) => (
            GraphFile {
                commit_id: commit.commit_id.clone(),
                complete: true,
                pairs: r.labels.to_annotation(&commit.repo).pairs,
                graph: Some(r.graph),
                calls: prior_calls + r.calls,
                parse_warnings: r.parse_warnings,
                usage,
                error: None,
            },
            Done::Inferred { calls: r.calls },
        ),
        Err(InferGraphError::Aborted { partial, source }) => {
            let msg = source.to_string();
            log::error!("inference for {} aborted: {msg}", commit.commit_id);
            (
                GraphFile {
                    commit_id: commit.commit_id.clone(),
                    complete: false,
                    pairs: partial.to_annotation(&commit.repo).pairs,
                    graph: None,
                    calls: prior_calls + gw.calls(),
                    parse_warnings: 0,
                    usage,
                    error: Some(msg.clone()),
                },
                Done::Failed(msg),
            )
        }
        Err(e) => return Err(CliError::config(format!("{}: {e}", commit.commit_id))),
    };
    write_json(&path, &file)?;
    Ok(done)
}

pub fn run(cfg: &HarnessConfig, prompt_path: Option<&Path>, force: bool) -> CliResult<Outcome> {
    let store = Store::new(&cfg.output_dir);
    let gateways = GatewayFactory::from_config(cfg, "infer-graph")?;
    let prompt = cfg.prompt(prompt_path)?;
    let opts = InferOptions {
        temperature: cfg.tuner.temperature,
        max_output_tokens: cfg.tuner.max_output_tokens,
    };
    let commits = store.load_commits()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads())
        .build()
        .or_external("cannot start worker pool")?;
    let results: Vec<CliResult<Done>> = pool.install(|| {
        commits
            .par_iter()
            .map(|c| infer_one(c, &store, &prompt, &gateways, &opts, force))
            .collect()
    });

    let (mut inferred, mut skipped, mut small, mut calls) = (0, 0, 0, 0);
    let mut failures = Vec::new();
    for (c, r) in commits.iter().zip(results) {
        match r? {
            Done::Skipped => skipped += 1,
            Done::TooSmall => small += 1,
            Done::Inferred { calls: n } => {
                inferred += 1;
                calls += n;
            }
            Done::Failed(msg) => failures.push(json!({"commit": c.commit_id, "error": msg})),
        }
    }
    let text = format!(
        "inferred {inferred} graph(s) with {calls} call(s); {skipped} already complete, {small} too small, {} failed",
        failures.len()
    );
    let failed = failures.len();
    let out = Outcome::ok(
        text,
        json!({
            "inferred": inferred,
            "calls": calls,
            "skipped": skipped,
            "too_small": small,
            "failed": failures,
        }),
    );
    Ok(if failed > 0 {
        out.fail(CliError::external(format!("{failed} commit(s) left partial; rerun to resume")))
    } else {
        out
    })
}
