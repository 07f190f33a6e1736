//! Output directory layout and JSON file helpers.
//!
//! ```text
//! <out>/commits/<commit>.json
//! <out>/graphs/<commit>.json
//! <out>/traces/<sut>/<original|filter>/<commit>.json
//! <out>/tune/checkpoint.json, <out>/tune/result.json
//! <out>/prompts/tuned.txt
//! <out>/report.json, <out>/report.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use editflow_core::corpus::Commit;
use editflow_core::flow::{AnnotatedPair, FlowGraph, PairLabelSet};
use editflow_core::gateway::UsageRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliResult, Classify};

#[derive(Debug, Clone)]
pub struct Store {
    pub root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn commits_dir(&self) -> PathBuf {
        self.root.join("commits")
    }

    pub fn commit_path(&self, id: &str) -> PathBuf {
        self.commits_dir().join(format!("{id}.json"))
    }

    pub fn graphs_dir(&self) -> PathBuf {
        self.root.join("graphs")
    }

    pub fn graph_path(&self, id: &str) -> PathBuf {
        self.graphs_dir().join(format!("{id}.json"))
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.root.join("traces")
    }

    pub fn trace_path(&self, sut: &str, filter: bool, id: &str) -> PathBuf {
        let config = if filter { "filter" } else { "original" };
        self.traces_dir().join(sut).join(config).join(format!("{id}.json"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.root.join("tune").join("checkpoint.json")
    }

    pub fn tune_result_path(&self) -> PathBuf {
        self.root.join("tune").join("result.json")
    }

    pub fn tuned_prompt_path(&self) -> PathBuf {
        self.root.join("prompts").join("tuned.txt")
    }

    /// Every cached commit, sorted by id.
    pub fn load_commits(&self) -> CliResult<Vec<Commit>> {
        let mut out = Vec::new();
        for path in json_files(&self.commits_dir())? {
            out.push(read_json::<Commit>(&path)?);
        }
        out.sort_by(|a, b| a.commit_id.cmp(&b.commit_id));
        Ok(out)
    }
}

/// `*.json` files directly inside `dir`, sorted; empty if `dir` is missing.
pub fn json_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .or_external(format!("cannot list {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).or_config(format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).or_config(format!("cannot parse {}", path.display()))
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).or_external(format!("cannot create {}", dir.display()))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    fs::write(&tmp, bytes).or_external(format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).or_external(format!("cannot write {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Inferred labels for one commit. `complete` is false when inference was
/// interrupted; such files are resumed on the next run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub commit_id: String,
    pub complete: bool,
    pub pairs: Vec<AnnotatedPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<FlowGraph>,
    #[serde(default)]
    pub calls: usize,
    #[serde(default)]
    pub parse_warnings: usize,
    #[serde(default)]
    pub usage: UsageRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl GraphFile {
    pub fn labels(&self) -> PairLabelSet {
        let mut set = PairLabelSet::new(&self.commit_id);
        for p in &self.pairs {
            set.set(p.a, p.b, p.label);
        }
        set
    }
}

/// Short file-system-safe name for a SUT registry key.
pub fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
