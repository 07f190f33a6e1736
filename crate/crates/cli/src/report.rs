use std::collections::BTreeSet;

use editflow_core::metrics::render_report;
use editflow_core::twin::SimulationTrace;
use serde_json::json;

use crate::config::HarnessConfig;
use crate::error::{CliError, CliResult, Classify};
use crate::store::{read_json, write_atomic, write_json, Store};
use crate::Outcome;

pub fn run(cfg: &HarnessConfig, traces: Option<String>) -> CliResult<Outcome> {
    let store = Store::new(&cfg.output_dir);
    let pattern = traces.unwrap_or_else(|| store.traces_dir().join("**").join("*.json").to_string_lossy().into_owned());
    let mut paths: Vec<_> = glob::glob(&pattern)
        .or_config(format!("bad trace glob {pattern:?}"))?
        .filter_map(Result::ok)
        .collect();
    paths.sort();
    let mut loaded: Vec<SimulationTrace> = Vec::with_capacity(paths.len());
    for p in &paths {
        loaded.push(read_json(p)?);
    }

    let needed: BTreeSet<&str> = loaded.iter().map(|t| t.commit_id.as_str()).collect();
    let mut commits = Vec::new();
    for id in needed {
        let path = store.commit_path(id);
        if !path.exists() {
            return Err(CliError::config(format!("trace names commit {id}, which is not cached")));
        }
        commits.push(read_json(&path)?);
    }
    let (report, table) = render_report(&loaded, &commits).or_config("cannot compute report")?;
    write_json(&store.root.join("report.json"), &report)?;
    write_atomic(&store.root.join("report.txt"), table.as_bytes())?;

    let fails = cfg.thresholds.check(&report);
    let out = Outcome::ok(
        table.trim_end().to_string(),
        json!({"report": report, "threshold_failures": fails}),
    );
    Ok(if fails.is_empty() {
        out
    } else {
        out.fail(CliError::threshold(format!("thresholds not met:\n  {}", fails.join("\n  "))))
    })
}
