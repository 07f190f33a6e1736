use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use editflow_core::corpus::{Commit, GitTree};
use editflow_core::flow::{build_flow_graph, AnnotationFile, FlowGraph};
use editflow_core::flow_filter::FlowFilter;
use editflow_core::recovery::PromptCandidate;
use editflow_core::twin::{
    simulate, MockSut, RecommendationBatch, ReplayScript, ReplaySut, SimConfig, SimulationError, SubprocessSut,
    SuccessorOracleSut, Sut, SutError, SutRequest,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{GatewayFactory, HarnessConfig, SutSpec};
use crate::error::{CliError, CliResult, Classify};
use crate::store::{json_files, read_json, safe_name, write_json, GraphFile, Store};
use crate::Outcome;

/// Reports the registry name instead of the adapter's own id.
struct Named {
    name: String,
    inner: Box<dyn Sut>,
}

impl Sut for Named {
    fn id(&self) -> String {
        self.name.clone()
    }

    fn recommend(&mut self, req: &SutRequest) -> Result<RecommendationBatch, SutError> {
        self.inner.recommend(req)
    }
}

/// FNV-1a, so per-commit seeds do not depend on the std hasher.
fn stable_hash(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn replay_script(path: &Path, commit_id: &str) -> CliResult<Option<ReplayScript>> {
    let file = if path.is_dir() { path.join(format!("{commit_id}.json")) } else { path.to_path_buf() };
    if !file.exists() {
        return Ok(None);
    }
    let script: ReplayScript = read_json(&file)?;
    Ok(match &script.commit_id {
        Some(id) if id != commit_id => None,
        _ => Some(script),
    })
}

fn build_sut(name: &str, spec: &SutSpec, commit: &Commit, graph: &FlowGraph, seed: u64) -> CliResult<Box<dyn Sut>> {
    let inner: Box<dyn Sut> = match spec {
        SutSpec::Subprocess { command, timeout_secs } => {
            Box::new(SubprocessSut::new(name, command.clone(), Duration::from_secs(*timeout_secs)))
        }
        SutSpec::Mock { batch_size, .. } => {
            let sut_seed = seed ^ stable_hash(&commit.commit_id);
            Box::new(
                MockSut::new(graph.clone(), commit.clone(), spec.noise().unwrap(), *batch_size, sut_seed)
                    .map_err(CliError::config)?,
            )
        }
        SutSpec::Replay { script } => {
            let s = replay_script(script, &commit.commit_id)?.unwrap_or_else(|| {
                log::warn!("no replay script for {}; every query answers empty", commit.commit_id);
                ReplayScript {
                    protocol_version: editflow_core::twin::PROTOCOL_VERSION,
                    commit_id: Some(commit.commit_id.clone()),
                    batches: Vec::new(),
                }
            });
            Box::new(ReplaySut::new(s))
        }
        SutSpec::Oracle {} => Box::new(SuccessorOracleSut::new(graph.clone(), commit.clone())),
    };
    Ok(Box::new(Named {
        name: name.to_string(),
        inner,
    }))
}

/// Graphs by commit id, from inferred graph files or from annotations.
fn load_graphs(store: &Store, annotations: Option<&str>, commits: &[Commit]) -> CliResult<BTreeMap<String, FlowGraph>> {
    let mut out = BTreeMap::new();
    match annotations {
        Some(pattern) => {
            let by_id: BTreeMap<&str, &Commit> = commits.iter().map(|c| (c.commit_id.as_str(), c)).collect();
            for path in glob::glob(pattern).or_config(format!("bad annotation glob {pattern:?}"))? {
                let path = path.or_config("cannot read annotation path")?;
                let ann: AnnotationFile = read_json(&path)?;
                let Some(c) = by_id.get(ann.commit_id.as_str()) else {
                    log::warn!("annotation {} names an uncached commit", path.display());
                    continue;
                };
                let g = build_flow_graph(&c.hunk_ids(), &ann.to_label_set())
                    .or_config(format!("annotation {}", path.display()))?;
                out.insert(ann.commit_id, g);
            }
        }
        None => {
            for path in json_files(&store.graphs_dir())? {
                let gf: GraphFile = read_json(&path)?;
                match gf.graph {
                    Some(g) if gf.complete => {
                        out.insert(gf.commit_id, g);
                    }
                    _ => log::warn!("graph for {} is partial; skipping", gf.commit_id),
                }
            }
        }
    }
    Ok(out)
}

enum Done {
    Skipped,
    Simulated { fallback: bool },
}

struct Job<'a> {
    cfg: &'a HarnessConfig,
    store: &'a Store,
    name: &'a str,
    spec: &'a SutSpec,
    seed: u64,
    filter: Option<(&'a GatewayFactory, &'a PromptCandidate)>,
    force: bool,
}

impl Job<'_> {
    fn run(&self, commit: &Commit, graph: &FlowGraph) -> CliResult<Done> {
        let path = self
            .store
            .trace_path(&safe_name(self.name), self.filter.is_some(), &commit.commit_id);
        if path.exists() && !self.force {
            return Ok(Done::Skipped);
        }
        let mut sut = build_sut(self.name, self.spec, commit, graph, self.seed)?;
        let sim = SimConfig {
            seed: self.seed,
            max_batch: self.cfg.simulation.max_batch,
            sut_retries: self.cfg.simulation.sut_retries,
            ..SimConfig::default()
        };
        let tree = GitTree::new(commit.repo_path());
        let gw = self.filter.map(|(f, _)| f.build());
        let mut flow = match (&gw, self.filter) {
            (Some(gw), Some((_, prompt))) => {
                Some(FlowFilter::new(prompt.clone(), gw, self.cfg.simulation.filter_config.clone()))
            }
            _ => None,
        };
        let trace = simulate(commit, graph, sut.as_mut(), &tree, &sim, flow.as_mut()).map_err(|e| match e {
            SimulationError::GraphMismatch | SimulationError::BadForcedPath(_) => {
                CliError::config(format!("{}: {e}", commit.commit_id))
            }
            other => CliError::external(format!("{}: {other}", commit.commit_id)),
        })?;
        write_json(&path, &trace)?;
        Ok(Done::Simulated {
            fallback: trace.fallback_fired,
        })
    }
}

pub struct SimulateArgs<'a> {
    pub sut: &'a str,
    pub with_filter: bool,
    pub annotations: Option<&'a str>,
    pub prompt: Option<&'a Path>,
    pub force: bool,
}

pub fn run(cfg: &HarnessConfig, args: SimulateArgs<'_>) -> CliResult<Outcome> {
    let seed = cfg.require_seed("simulate")?;
    let spec = cfg.sut.get(args.sut).ok_or_else(|| {
        let known: Vec<&str> = cfg.sut.keys().map(String::as_str).collect();
        CliError::config(format!("unknown SUT {:?} (configured: {})", args.sut, known.join(", ")))
    })?;
    let filter_on = args.with_filter || cfg.simulation.filter;
    let store = Store::new(&cfg.output_dir);
    let gateways = if filter_on { Some(GatewayFactory::from_config(cfg, "the flow filter")?) } else { None };
    let prompt = if filter_on { Some(cfg.prompt(args.prompt)?) } else { None };

    let commits = store.load_commits()?;
    let graphs = load_graphs(&store, args.annotations, &commits)?;
    let work: Vec<(&Commit, &FlowGraph)> = commits
        .iter()
        .filter_map(|c| match graphs.get(&c.commit_id) {
            Some(g) => Some((c, g)),
            None => {
                log::warn!("no graph for {}; skipping", c.commit_id);
                None
            }
        })
        .collect();

    let job = Job {
        cfg,
        store: &store,
        name: args.sut,
        spec,
        seed,
        filter: gateways.as_ref().zip(prompt.as_ref()),
        force: args.force,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads())
        .build()
        .or_external("cannot start worker pool")?;
    let results: Vec<CliResult<Done>> = pool.install(|| work.par_iter().map(|(c, g)| job.run(c, g)).collect());

    let (mut simulated, mut skipped, mut fallbacks) = (0, 0, 0);
    let mut first_err = None;
    let mut errors = Vec::new();
    for ((c, _), r) in work.iter().zip(results) {
        match r {
            Ok(Done::Skipped) => skipped += 1,
            Ok(Done::Simulated { fallback }) => {
                simulated += 1;
                fallbacks += fallback as usize;
            }
            Err(e) => {
                log::error!("{e}");
                errors.push(json!({"commit": c.commit_id, "error": e.to_string()}));
                first_err.get_or_insert(e);
            }
        }
    }
    let config = if filter_on { "filter" } else { "original" };
    let text = format!(
        "{}/{config}: simulated {simulated}, skipped {skipped} existing, {} failed, {fallbacks} with fallback",
        args.sut,
        errors.len()
    );
    let out = Outcome::ok(
        text,
        json!({
            "sut": args.sut,
            "config": config,
            "simulated": simulated,
            "skipped": skipped,
            "fallbacks": fallbacks,
            "failed": errors,
        }),
    );
    Ok(match first_err {
        Some(e) => out.fail(e),
        None => out,
    })
}
